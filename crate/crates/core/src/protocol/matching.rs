use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::hierarchy::{CommunityKind, Hierarchy};
use super::{
    ActionTemplate, CommunityId, EscalationOutcome, EscalationTrace, Notification, NotificationId, ProtocolError, SlotFill,
};

/// A template whose every slot is filled, with the availabilities it used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedAction {
    pub template: ActionTemplate,
    /// Communities contributing at least one slot, plus the host if any.
    pub sources: BTreeSet<CommunityId>,
    pub consumed: Vec<(CommunityId, NotificationId)>,
}

impl ResolvedAction {
    pub fn is_inter_community(&self) -> bool {
        self.sources.len() >= 2
    }

    pub fn outcome(&self) -> EscalationOutcome {
        if self.is_inter_community() {
            EscalationOutcome::ResolvedViaSon
        } else {
            EscalationOutcome::ResolvedLocally
        }
    }
}

/// Greedy reservation-station fill.
///
/// Templates are considered in order; each empty slot takes the first
/// candidate (in the given order) that offers exactly that role and has not
/// been taken yet. An agent fills at most one slot. A template that cannot
/// be completed releases its tentative picks, so only resolved templates
/// consume candidates.
pub fn fill_templates(templates: &[ActionTemplate], candidates: &[(CommunityId, &Notification)]) -> Vec<ResolvedAction> {
    let mut taken: BTreeSet<NotificationId> = BTreeSet::new();
    let mut out = Vec::new();
    for template in templates {
        let mut t = template.clone();
        let mut picked: Vec<(CommunityId, NotificationId)> = Vec::new();
        let mut agents = t.agents();
        for slot in 0..t.required_roles.len() {
            if t.filled[slot].is_some() {
                continue;
            }
            let role = t.required_roles[slot];
            let hit = candidates.iter().find(|(_, n)| {
                !taken.contains(&n.id)
                    && !picked.iter().any(|(_, p)| *p == n.id)
                    && !agents.contains(&n.origin_agent)
                    && n.roles.contains(&role)
            });
            if let Some((community, n)) = hit {
                t.filled[slot] = Some(SlotFill { agent: n.origin_agent, source: Some(*community), notification: Some(n.id) });
                agents.insert(n.origin_agent);
                picked.push((*community, n.id));
            }
        }
        if t.is_resolved() {
            taken.extend(picked.iter().map(|(_, id)| *id));
            let mut sources: BTreeSet<CommunityId> = t.filled.iter().flatten().filter_map(|f| f.source).collect();
            if !sources.is_empty() {
                sources.extend(t.host);
            }
            out.push(ResolvedAction { template: t, sources, consumed: picked });
        }
    }
    out
}

/// Outcome of an escalation. Planning only: commit `resolved` to consume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Escalation {
    pub trace: EscalationTrace,
    pub resolved: Option<ResolvedAction>,
}

impl Hierarchy {
    /// Tries to fill `template` from every availability pending in the subtree of `node`.
    pub fn plan_in_subtree(
        &self,
        node: CommunityId,
        template: &ActionTemplate,
        priority: &dyn Fn(CommunityId) -> u64,
    ) -> Result<Option<ResolvedAction>, ProtocolError> {
        let scope = self.subtree(node);
        let candidates = self.candidates(&scope, priority)?;
        Ok(fill_templates(std::slice::from_ref(template), &candidates).pop())
    }

    /// Propagates an unresolved critical action from `node` to successive
    /// higher-ups. Each visited ancestor re-matches with visibility over its
    /// whole subtree. Stops at the first level able to fill every slot, or
    /// fails when the root has been passed or `flooding_threshold` hops are used.
    pub fn raise_exception(
        &self,
        node: CommunityId,
        unresolved: &ActionTemplate,
        flooding_threshold: usize,
        priority: &dyn Fn(CommunityId) -> u64,
    ) -> Result<Escalation, ProtocolError> {
        if !unresolved.critical {
            return Err(ProtocolError::NotCritical);
        }
        self.node(node)?;
        let template = unresolved.cleared();
        let mut path = vec![node];
        let mut current = node;
        loop {
            let hops = path.len() - 1;
            let parent = match self.parent(current) {
                Some(p) if hops < flooding_threshold => p,
                _ => return Ok(failed(path)),
            };
            current = parent;
            path.push(current);
            if let Some(r) = self.plan_in_subtree(current, &template, priority)? {
                let hops = path.len() - 1;
                return Ok(Escalation {
                    trace: EscalationTrace { path, hops, outcome: r.outcome() },
                    resolved: Some(r),
                });
            }
        }
    }

    /// Routes a service request published by an individual.
    ///
    /// The request climbs from `origin` through its ancestors until it reaches
    /// an emergency-response community, which refers it sideways to `referral`
    /// (the hospital it judges best placed). The hospital tries to resolve the
    /// action with its own resources; otherwise it raises an exception towards
    /// its own higher-ups. If no emergency-response community is met this is a
    /// plain [`Hierarchy::raise_exception`] from `origin`.
    pub fn route_request(
        &self,
        origin: CommunityId,
        referral: CommunityId,
        template: &ActionTemplate,
        flooding_threshold: usize,
        priority: &dyn Fn(CommunityId) -> u64,
    ) -> Result<Escalation, ProtocolError> {
        if !template.critical {
            return Err(ProtocolError::NotCritical);
        }
        let template = template.cleared();
        let mut path = vec![origin];
        let mut current = origin;
        loop {
            let node = self.node(current)?;
            if node.kind == CommunityKind::EmergencyResponse {
                break;
            }
            if let Some(r) = self.plan_in_subtree(current, &template, priority)? {
                return Ok(resolved_at(path, r));
            }
            let hops = path.len() - 1;
            match node.parent {
                Some(p) if hops < flooding_threshold => {
                    current = p;
                    path.push(p);
                }
                Some(_) => return Ok(failed(path)),
                None => return self.raise_exception(origin, &template, flooding_threshold, priority),
            }
        }
        if path.len() > flooding_threshold {
            return Ok(failed(path));
        }
        path.push(referral);
        if let Some(r) = self.plan_in_subtree(referral, &template, priority)? {
            return Ok(resolved_at(path, r));
        }
        let used = path.len() - 1;
        let up = self.raise_exception(referral, &template, flooding_threshold - used, priority)?;
        path.extend(up.trace.path.into_iter().skip(1));
        let hops = path.len() - 1;
        Ok(Escalation { trace: EscalationTrace { path, hops, outcome: up.trace.outcome }, resolved: up.resolved })
    }
}

fn failed(path: Vec<CommunityId>) -> Escalation {
    let hops = path.len() - 1;
    Escalation { trace: EscalationTrace { path, hops, outcome: EscalationOutcome::Failed }, resolved: None }
}

fn resolved_at(path: Vec<CommunityId>, r: ResolvedAction) -> Escalation {
    let hops = path.len() - 1;
    Escalation { trace: EscalationTrace { path, hops, outcome: r.outcome() }, resolved: Some(r) }
}

#[cfg(test)]
mod tests {
    use super::super::{ActionId, NotificationKind, Role};
    use super::*;
    use crate::domain::AgentId;
    use crate::protocol::{HierarchyConfig, ScenarioLayout};

    fn avail(id: u64, agent: u32, roles: Vec<Role>) -> Notification {
        Notification { id: NotificationId(id), origin_agent: AgentId(agent), kind: NotificationKind::Availability, roles, created_at: 0 }
    }

    const C: CommunityId = CommunityId(0);

    #[test]
    fn fills_expert_and_appliance() {
        let a = avail(0, 1, vec![Role::ExpertDoctor(5)]);
        let b = avail(1, 2, vec![Role::Appliance(5)]);
        let t = ActionTemplate::new(ActionId(0), vec![Role::ExpertDoctor(5), Role::Appliance(5)], true);
        let r = fill_templates(&[t], &[(C, &a), (C, &b)]);
        assert_eq!(r.len(), 1);
        assert!(r[0].template.is_resolved());
        assert_eq!(r[0].consumed.len(), 2);
        assert!(!r[0].is_inter_community());
    }

    #[test]
    fn tags_match_exactly() {
        let a = avail(0, 1, vec![Role::ExpertDoctor(6)]);
        let t = ActionTemplate::new(ActionId(0), vec![Role::ExpertDoctor(5)], true);
        assert!(fill_templates(&[t], &[(C, &a)]).is_empty());
    }

    /// Brute-force oracle: every way of handing the single doctor to at most
    /// one of the two templates; under first-come first-served exactly the
    /// first template must receive it.
    #[test]
    fn two_templates_one_doctor_resolves_first_only() {
        let doc = avail(0, 1, vec![Role::MinorDoctor]);
        let t0 = ActionTemplate::new(ActionId(0), vec![Role::MinorDoctor], true);
        let t1 = ActionTemplate::new(ActionId(1), vec![Role::MinorDoctor], true);

        let mut feasible = Vec::new();
        for owner in [None, Some(0usize), Some(1)] {
            let resolved: Vec<usize> = owner.into_iter().collect();
            feasible.push(resolved);
        }
        // Maximal feasible outcomes resolve exactly one template.
        let maximal: Vec<_> = feasible.iter().filter(|r| r.len() == 1).collect();
        assert_eq!(maximal.len(), 2);
        // FIFO picks the earliest template among them.
        let fifo = maximal.iter().map(|r| r[0]).min().unwrap();

        let r = fill_templates(&[t0.clone(), t1.clone()], &[(C, &doc)]);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].template.id, ActionId(fifo as u32));
        let r = fill_templates(&[t1, t0], &[(C, &doc)]);
        assert_eq!(r[0].template.id, ActionId(1));
    }

    #[test]
    fn an_agent_fills_one_slot_only() {
        let doc = avail(0, 1, vec![Role::MinorDoctor, Role::ExpertDoctor(5)]);
        let t = ActionTemplate::new(ActionId(0), vec![Role::MinorDoctor, Role::ExpertDoctor(5)], true);
        assert!(fill_templates(&[t], &[(C, &doc)]).is_empty());
    }

    #[test]
    fn unresolved_template_does_not_hold_candidates() {
        let doc = avail(0, 1, vec![Role::ExpertDoctor(5)]);
        let needs_both = ActionTemplate::new(ActionId(0), vec![Role::ExpertDoctor(5), Role::Appliance(5)], true);
        let needs_doc = ActionTemplate::new(ActionId(1), vec![Role::ExpertDoctor(5)], true);
        let r = fill_templates(&[needs_both, needs_doc], &[(C, &doc)]);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].template.id, ActionId(1));
    }

    /// Two hospitals, individuals 0..4 in two residents communities; hospital
    /// staff agents 10.. are given explicitly.
    fn scenario(h0: Vec<u32>, h1: Vec<u32>) -> Hierarchy {
        let layout = ScenarioLayout {
            hospitals: vec![h0.into_iter().map(AgentId).collect(), h1.into_iter().map(AgentId).collect()],
            residents: vec![vec![AgentId(0), AgentId(2)], vec![AgentId(1), AgentId(3)]],
            first_coordinator: AgentId(100),
        };
        Hierarchy::build(&HierarchyConfig::scenario(&layout)).unwrap()
    }

    fn offer(h: &mut Hierarchy, hospital: &str, agent: u32, roles: Vec<Role>) {
        let c = h.find(hospital).unwrap();
        h.publish(c, AgentId(agent), NotificationKind::Availability, roles, 0).unwrap();
    }

    fn severe_request(patient: u32, d: u8, host: CommunityId) -> ActionTemplate {
        ActionTemplate::new(
            ActionId(patient),
            vec![Role::ExpertDoctor(d), Role::Appliance(d), Role::Ambulance, Role::Patient(d)],
            true,
        )
        .with_host(host)
        .prefill(Role::Patient(d), AgentId(patient))
    }

    fn keys(h: &Hierarchy, path: &[CommunityId]) -> Vec<String> {
        path.iter().map(|c| h.key(*c).to_string()).collect()
    }

    #[test]
    fn infra_community_cooperation() {
        let mut h = scenario(vec![10, 11, 12], vec![]);
        offer(&mut h, "hospital-0", 10, vec![Role::MinorDoctor, Role::ExpertDoctor(5)]);
        offer(&mut h, "hospital-0", 11, vec![Role::Appliance(5)]);
        offer(&mut h, "hospital-0", 12, vec![Role::Ambulance]);
        let a = h.find("hospital-0").unwrap();
        let isoc = h.find("isoc-0").unwrap();
        let e = h.route_request(isoc, a, &severe_request(0, 5, a), 8, &|_| 0).unwrap();
        assert_eq!(keys(&h, &e.trace.path), ["isoc-0", "residents-0", "emergency-response", "hospital-0"]);
        assert_eq!(e.trace.outcome, EscalationOutcome::ResolvedLocally);
        assert_eq!(e.trace.hops, 3);
        let r = e.resolved.unwrap();
        assert_eq!(r.sources, [a].into_iter().collect());
    }

    #[test]
    fn inter_community_cooperation() {
        let mut h = scenario(vec![10, 12], vec![11]);
        offer(&mut h, "hospital-0", 10, vec![Role::MinorDoctor, Role::ExpertDoctor(5)]);
        offer(&mut h, "hospital-1", 11, vec![Role::Appliance(5)]);
        offer(&mut h, "hospital-0", 12, vec![Role::Ambulance]);
        let a = h.find("hospital-0").unwrap();
        let b = h.find("hospital-1").unwrap();
        let isoc = h.find("isoc-0").unwrap();
        let e = h.route_request(isoc, a, &severe_request(0, 5, a), 8, &|c| u64::from(c != a)).unwrap();
        assert_eq!(
            keys(&h, &e.trace.path),
            ["isoc-0", "residents-0", "emergency-response", "hospital-0", "regional-hospitals"]
        );
        assert_eq!(e.trace.outcome, EscalationOutcome::ResolvedViaSon);
        let r = e.resolved.unwrap();
        assert_eq!(r.sources, [a, b].into_iter().collect());
        assert_eq!(r.template.filler(Role::Appliance(5)).unwrap().source, Some(b));
        h.commit(&r).unwrap();
        assert!(h.node(b).unwrap().pending_notifications.is_empty());
        assert_eq!(h.commit(&r), Err(ProtocolError::StaleNotification(r.consumed[0].1)));
    }

    #[test]
    fn exhaustion_fails_after_root() {
        let mut h = scenario(vec![10, 12], vec![11]);
        offer(&mut h, "hospital-0", 10, vec![Role::MinorDoctor, Role::ExpertDoctor(6)]);
        offer(&mut h, "hospital-1", 11, vec![Role::Appliance(5)]);
        let a = h.find("hospital-0").unwrap();
        let isoc = h.find("isoc-0").unwrap();
        let e = h.route_request(isoc, a, &severe_request(0, 5, a), 10, &|_| 0).unwrap();
        assert_eq!(e.trace.outcome, EscalationOutcome::Failed);
        assert_eq!(*e.trace.path.last().unwrap(), h.root());
        assert_eq!(e.trace.hops, e.trace.path.len() - 1);
        assert!(e.resolved.is_none());
    }

    #[test]
    fn flooding_threshold_caps_hops() {
        let h = scenario(vec![10], vec![]);
        let a = h.find("hospital-0").unwrap();
        let isoc = h.find("isoc-0").unwrap();
        for threshold in 0..6 {
            let e = h.route_request(isoc, a, &severe_request(0, 5, a), threshold, &|_| 0).unwrap();
            assert!(e.trace.hops <= threshold);
            assert_eq!(e.trace.outcome, EscalationOutcome::Failed);
        }
    }

    #[test]
    fn non_critical_actions_do_not_escalate() {
        let h = scenario(vec![10], vec![]);
        let a = h.find("hospital-0").unwrap();
        let t = ActionTemplate::new(ActionId(0), vec![Role::MinorDoctor], false);
        assert_eq!(h.raise_exception(a, &t, 8, &|_| 0), Err(ProtocolError::NotCritical));
    }
}
