//! Everyday activities of individuals.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::domain::{Individual, IndividualId, IndividualState};
use crate::geometry::travel_time;
use crate::{Bounds, Position, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivityKind {
    GoToMarket,
    GoToOffice { deadline: Tick },
    WalkInPark { wants_company: bool },
    VisitFriend,
    StayHome,
    Exercise,
}

impl ActivityKind {
    pub const COUNT: usize = 6;

    pub fn index(&self) -> usize {
        match self {
            ActivityKind::GoToMarket => 0,
            ActivityKind::GoToOffice { .. } => 1,
            ActivityKind::WalkInPark { .. } => 2,
            ActivityKind::VisitFriend => 3,
            ActivityKind::StayHome => 4,
            ActivityKind::Exercise => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub kind: ActivityKind,
    pub destination: Position,
    pub started_at: Tick,
    pub ends_at: Tick,
    pub depart_at: Tick,
    /// Office deadline cannot be met.
    pub late: bool,
    pub partner: Option<IndividualId>,
}

impl Activity {
    pub fn wants_company(&self) -> bool {
        matches!(self.kind, ActivityKind::WalkInPark { wants_company: true })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeparturePlan {
    pub depart_at: Tick,
    pub late: bool,
}

/// Latest departure that still reaches `office` by `deadline`; immediate and
/// flagged late when that moment has already passed.
pub fn office_departure_plan(
    position: &Position,
    office: &Position,
    speed: f64,
    deadline: Tick,
    now: Tick,
) -> Result<DeparturePlan, EngineError> {
    if deadline < now {
        return Err(EngineError::DeadlinePassed { deadline, now });
    }
    let travel = travel_time(position, office, speed)?;
    Ok(match deadline.checked_sub(travel) {
        Some(d) if d >= now => DeparturePlan { depart_at: d, late: false },
        _ => DeparturePlan { depart_at: now, late: true },
    })
}

/// Draws the next activity of an idle individual.
///
/// Draw order: kind, destination x, destination y, duration, then the
/// companionship wish for park walks. Office deadlines fall three quarters
/// of the way through the activity.
pub fn schedule_activity<R: Rng + ?Sized>(
    individual: &Individual,
    now: Tick,
    bounds: &Bounds,
    durations: (Tick, Tick),
    rng: &mut R,
) -> Result<Activity, EngineError> {
    if individual.state != IndividualState::Idle {
        return Err(EngineError::NotIdle(individual.id));
    }
    let kind_index = rng.gen_range(0..ActivityKind::COUNT);
    let destination = Position::new(rng.gen_range(0.0..bounds.width), rng.gen_range(0.0..bounds.height));
    let duration = rng.gen_range(durations.0..=durations.1);
    let ends_at = now + duration;
    let mut depart_at = now;
    let mut late = false;
    let kind = match kind_index {
        0 => ActivityKind::GoToMarket,
        1 => {
            let deadline = now + duration * 3 / 4;
            let plan = office_departure_plan(&individual.position, &destination, individual.speed, deadline, now)?;
            depart_at = plan.depart_at;
            late = plan.late;
            ActivityKind::GoToOffice { deadline }
        }
        2 => ActivityKind::WalkInPark { wants_company: rng.gen_bool(0.5) },
        3 => ActivityKind::VisitFriend,
        4 => ActivityKind::StayHome,
        _ => ActivityKind::Exercise,
    };
    Ok(Activity { kind, destination, started_at: now, ends_at, depart_at, late, partner: None })
}

/// A park walker looking for company, announced to its residents community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkRequest {
    pub individual: IndividualId,
    pub residents: usize,
    pub destination: Position,
    pub requested_at: Tick,
    /// From this tick on the walker gives up waiting and goes alone.
    pub expires_at: Tick,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    /// `(earlier, later, shared destination)`.
    pub pairs: Vec<(IndividualId, IndividualId, Position)>,
    pub solo: Vec<WalkRequest>,
    pub waiting: Vec<WalkRequest>,
}

/// First-come first-served pairing of willing walkers, never across
/// residents communities. Paired walkers head to the earlier requester's
/// destination.
pub fn pair_walkers(pending: &[WalkRequest], now: Tick) -> Pairing {
    let mut open: BTreeMap<usize, WalkRequest> = BTreeMap::new();
    let mut out = Pairing::default();
    for w in pending {
        match open.remove(&w.residents) {
            Some(first) => out.pairs.push((first.individual, w.individual, first.destination)),
            None => {
                open.insert(w.residents, w.clone());
            }
        }
    }
    let mut rest: Vec<WalkRequest> = open.into_values().collect();
    rest.sort_by_key(|w| (w.requested_at, w.individual));
    for w in rest {
        if w.expires_at <= now {
            out.solo.push(w);
        } else {
            out.waiting.push(w);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AgentId;
    use crate::protocol::CommunityId;
    use crate::rng::{substream, StreamTag};

    fn idle(pos: Position) -> Individual {
        Individual {
            id: IndividualId(0),
            agent: AgentId(0),
            position: pos,
            speed: 0.5,
            state: IndividualState::Idle,
            home_isoc: CommunityId(0),
            residents: 0,
            destination: None,
            depart_at: 0,
        }
    }

    #[test]
    fn office_departure_examples() {
        let o = Position::new(0.0, 0.0);
        let office = Position::new(10.0, 0.0);
        assert_eq!(office_departure_plan(&o, &office, 0.5, 140, 100).unwrap(), DeparturePlan { depart_at: 120, late: false });
        assert_eq!(office_departure_plan(&office, &office, 0.5, 140, 100).unwrap(), DeparturePlan { depart_at: 140, late: false });
        assert_eq!(office_departure_plan(&o, &office, 0.5, 105, 100).unwrap(), DeparturePlan { depart_at: 100, late: true });
        assert!(office_departure_plan(&o, &office, 0.5, 99, 100).is_err());
    }

    #[test]
    fn kinds_and_destinations_in_range() {
        let bounds = Bounds { width: 100.0, height: 100.0 };
        let mut rng = substream(11, StreamTag::Activities);
        let ind = idle(Position::new(50.0, 50.0));
        let mut seen = [false; ActivityKind::COUNT];
        for _ in 0..1000 {
            let a = schedule_activity(&ind, 7, &bounds, (100, 200), &mut rng).unwrap();
            seen[a.kind.index()] = true;
            assert!(bounds.contains(&a.destination));
            assert!((107..=207).contains(&a.ends_at));
            if let ActivityKind::GoToOffice { deadline } = a.kind {
                assert!(deadline >= 7 && deadline <= a.ends_at);
                assert!(a.depart_at <= deadline);
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn mean_duration_near_150() {
        let bounds = Bounds { width: 100.0, height: 100.0 };
        let mut rng = substream(11, StreamTag::Activities);
        let ind = idle(Position::new(50.0, 50.0));
        let total: u64 = (0..10_000)
            .map(|_| schedule_activity(&ind, 0, &bounds, (100, 200), &mut rng).unwrap().ends_at)
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((145.0..=155.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn dead_individuals_are_never_scheduled() {
        let bounds = Bounds { width: 100.0, height: 100.0 };
        let mut rng = substream(1, StreamTag::Activities);
        let mut ind = idle(Position::new(1.0, 1.0));
        ind.state = IndividualState::Dead;
        assert_eq!(schedule_activity(&ind, 0, &bounds, (100, 200), &mut rng), Err(EngineError::NotIdle(IndividualId(0))));
    }

    fn walker(i: u32, residents: usize, at: Tick, expires: Tick) -> WalkRequest {
        WalkRequest {
            individual: IndividualId(i),
            residents,
            destination: Position::new(i as f64, 0.0),
            requested_at: at,
            expires_at: expires,
        }
    }

    #[test]
    fn two_walkers_pair_up() {
        let p = pair_walkers(&[walker(1, 0, 0, 50), walker(2, 0, 1, 50)], 2);
        assert_eq!(p.pairs, vec![(IndividualId(1), IndividualId(2), Position::new(1.0, 0.0))]);
        assert!(p.solo.is_empty() && p.waiting.is_empty());
    }

    #[test]
    fn odd_walker_waits_then_goes_alone() {
        let pending = [walker(1, 0, 0, 50), walker(2, 0, 1, 50), walker(3, 0, 2, 50)];
        let p = pair_walkers(&pending, 10);
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.waiting.len(), 1);
        let p = pair_walkers(&p.waiting, 50);
        assert!(p.pairs.is_empty());
        assert_eq!(p.solo.len(), 1);
        assert_eq!(p.solo[0].individual, IndividualId(3));
    }

    #[test]
    fn no_pairs_across_communities() {
        let pending: Vec<_> = (0..10).map(|i| walker(i, (i % 2) as usize, i as Tick, 100)).collect();
        let p = pair_walkers(&pending, 0);
        assert_eq!(p.pairs.len(), 4);
        for (a, b, _) in &p.pairs {
            assert_eq!(a.0 % 2, b.0 % 2);
        }
        let p = pair_walkers(&[walker(1, 0, 0, 100), walker(2, 1, 0, 100)], 0);
        assert!(p.pairs.is_empty());
        assert_eq!(p.waiting.len(), 2);
    }
}
