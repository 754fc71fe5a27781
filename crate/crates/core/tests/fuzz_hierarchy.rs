//! Escalation on randomly shaped community trees.

use fso_core::domain::AgentId;
use fso_core::protocol::{
    ActionId, ActionTemplate, CommunityKind, EscalationOutcome, Hierarchy, HierarchyConfig, NodeSpec, NotificationKind, Role,
};
use proptest::prelude::*;

/// `parents[i]` picks the parent of node `i + 1` among nodes `0..=i`; depth is capped at 6.
fn tree(parents: &[usize]) -> (HierarchyConfig, Vec<usize>) {
    let mut depth = vec![0usize];
    let mut nodes = vec![NodeSpec {
        key: "n0".into(),
        kind: CommunityKind::Root,
        parent: None,
        representative: AgentId(1000),
        members: vec![AgentId(1000)],
    }];
    for (i, p) in parents.iter().enumerate() {
        let mut p = p % (i + 1);
        while depth[p] >= 6 {
            p = nodes_parent(&nodes, p);
        }
        depth.push(depth[p] + 1);
        let rep = AgentId(1001 + i as u32);
        nodes.push(NodeSpec {
            key: format!("n{}", i + 1),
            kind: CommunityKind::Other,
            parent: Some(format!("n{p}")),
            representative: rep,
            members: vec![rep, AgentId(i as u32 + 1)],
        });
    }
    (HierarchyConfig { nodes }, depth)
}

fn nodes_parent(nodes: &[NodeSpec], i: usize) -> usize {
    nodes[i].parent.as_ref().map_or(0, |k| k[1..].parse().unwrap())
}

const ROLES: [Role; 4] = [Role::MinorDoctor, Role::Ambulance, Role::Appliance(5), Role::ExpertDoctor(5)];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn escalation_is_bounded_and_terminates(
        parents in prop::collection::vec(any::<usize>(), 0..40),
        offers in prop::collection::vec((any::<usize>(), 0usize..4), 0..30),
        wanted in prop::collection::vec(0usize..4, 1..4),
        start in any::<usize>(),
        threshold in 0usize..10,
    ) {
        let (config, _) = tree(&parents);
        let mut h = Hierarchy::build(&config).unwrap();
        let n = h.len();
        for (node, role) in &offers {
            let i = node % n;
            if i == 0 {
                continue;
            }
            let c = h.find(&format!("n{i}")).unwrap();
            if !h.has_pending(c, AgentId(i as u32), NotificationKind::Availability) {
                h.publish(c, AgentId(i as u32), NotificationKind::Availability, vec![ROLES[*role]], 0).unwrap();
            }
        }
        let origin = h.find(&format!("n{}", start % n)).unwrap();
        let roles: Vec<Role> = wanted.iter().map(|r| ROLES[*r]).collect();
        let t = ActionTemplate::new(ActionId(0), roles, true);
        let bound = threshold.min(h.height());
        for e in [
            h.raise_exception(origin, &t, threshold, &|_| 0).unwrap(),
            h.route_request(origin, origin, &t, threshold, &|_| 0).unwrap(),
        ] {
            prop_assert!(e.trace.hops <= bound, "hops {} > {}", e.trace.hops, bound);
            prop_assert_eq!(e.trace.hops + 1, e.trace.path.len());
            let unique: std::collections::BTreeSet<_> = e.trace.path.iter().collect();
            prop_assert_eq!(unique.len(), e.trace.path.len());
            match e.trace.outcome {
                EscalationOutcome::Failed => prop_assert!(e.resolved.is_none()),
                EscalationOutcome::ResolvedLocally | EscalationOutcome::ResolvedViaSon => {
                    let r = e.resolved.as_ref().unwrap();
                    prop_assert!(r.template.is_resolved());
                    prop_assert_eq!(r.outcome(), e.trace.outcome);
                }
            }
        }
    }

    #[test]
    fn extra_availability_never_hurts(
        parents in prop::collection::vec(any::<usize>(), 1..20),
        offers in prop::collection::vec((any::<usize>(), 0usize..4), 0..20),
        extra in (any::<usize>(), 0usize..4),
    ) {
        let (config, _) = tree(&parents);
        let mut h = Hierarchy::build(&config).unwrap();
        let n = h.len();
        let publish = |h: &mut Hierarchy, node: usize, role: usize, agent: u32| {
            let c = h.find(&format!("n{}", node % n)).unwrap();
            let a = if node.is_multiple_of(n) { AgentId(1000) } else { AgentId(agent) };
            h.publish(c, a, NotificationKind::Availability, vec![ROLES[role]], 0).unwrap();
        };
        for (node, role) in &offers {
            publish(&mut h, *node, *role, (node % n) as u32);
        }
        let t = ActionTemplate::new(ActionId(1), vec![Role::MinorDoctor, Role::Appliance(5)], true);
        let before = h.plan_in_subtree(h.root(), &t, &|_| 0).unwrap().is_some();
        publish(&mut h, extra.0, extra.1, (extra.0 % n) as u32);
        let after = h.plan_in_subtree(h.root(), &t, &|_| 0).unwrap().is_some();
        prop_assert!(!before || after);
    }
}

#[test]
fn depth_cap_holds() {
    let parents: Vec<usize> = (0..30).collect();
    let (config, depth) = tree(&parents);
    assert_eq!(depth.iter().max(), Some(&6));
    assert_eq!(Hierarchy::build(&config).unwrap().height(), 6);
}
