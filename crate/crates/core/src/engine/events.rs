use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::domain::{AgentId, HospitalId, RequestId};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    PatientArrival { request: RequestId, hospital: HospitalId },
    /// Every resource of a network-resolved request is in place.
    AllocationComplete { request: RequestId },
    TreatmentEnd { request: RequestId },
    /// Fires only if the resource is still due back at `at`.
    ResourceFreed { agent: AgentId, at: Tick },
    DeathDeadline { request: RequestId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Scheduled {
    tick: Tick,
    seq: u64,
    event: Event,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        (other.tick, other.seq).cmp(&(self.tick, self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-ordered queue; ties break by insertion order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, tick: Tick, event: Event) {
        self.heap.push(Scheduled { tick, seq: self.next_seq, event });
        self.next_seq += 1;
    }

    /// Pops the earliest event scheduled at or before `now`.
    pub fn pop_due(&mut self, now: Tick) -> Option<(Tick, Event)> {
        if self.heap.peek().is_some_and(|s| s.tick <= now) {
            self.heap.pop().map(|s| (s.tick, s.event))
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Tick, &Event)> {
        self.heap.iter().map(|s| (s.tick, &s.event))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(i: u32) -> Event {
        Event::TreatmentEnd { request: RequestId(i) }
    }

    #[test]
    fn ties_break_by_insertion() {
        let mut q = EventQueue::new();
        q.schedule(5, ev(1));
        q.schedule(3, ev(2));
        q.schedule(5, ev(3));
        q.schedule(3, ev(4));
        assert_eq!(q.pop_due(2), None);
        let order: Vec<_> = std::iter::from_fn(|| q.pop_due(10)).collect();
        assert_eq!(order, vec![(3, ev(2)), (3, ev(4)), (5, ev(1)), (5, ev(3))]);
    }

    proptest! {
        #[test]
        fn pops_in_tick_then_sequence_order(ticks in proptest::collection::vec(0u64..50, 0..100)) {
            let mut q = EventQueue::new();
            for (i, t) in ticks.iter().enumerate() {
                q.schedule(*t, ev(i as u32));
            }
            let mut expected: Vec<(u64, usize)> = ticks.iter().copied().zip(0..).collect();
            expected.sort();
            let mut got = Vec::new();
            for now in 0..50 {
                while let Some((t, e)) = q.pop_due(now) {
                    prop_assert!(t <= now);
                    let Event::TreatmentEnd { request } = e else { unreachable!() };
                    got.push((t, request.0 as usize));
                }
            }
            prop_assert_eq!(got, expected);
        }
    }
}
