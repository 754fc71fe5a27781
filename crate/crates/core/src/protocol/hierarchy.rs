use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::matching::{self, ResolvedAction};
use super::{ActionTemplate, CommunityId, Notification, NotificationId, NotificationKind, ProtocolError, Role};
use crate::domain::AgentId;
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CommunityKind {
    Root,
    RegionalHospitals,
    EmergencyResponse,
    Hospital,
    Residents,
    Individual,
    Other,
}

/// One node of a hierarchy description. Parents are referenced by key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub key: String,
    pub kind: CommunityKind,
    pub parent: Option<String>,
    pub representative: AgentId,
    pub members: Vec<AgentId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub nodes: Vec<NodeSpec>,
}

/// Input for the healthcare scenario tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioLayout {
    /// Resource agents of each hospital.
    pub hospitals: Vec<Vec<AgentId>>,
    /// Individuals of each local residents community.
    pub residents: Vec<Vec<AgentId>>,
    /// Coordinators are numbered from here: root, regional hospitals,
    /// emergency response, then one per hospital and one per residents community.
    pub first_coordinator: AgentId,
}

impl ScenarioLayout {
    pub fn coordinator_count(&self) -> usize {
        3 + self.hospitals.len() + self.residents.len()
    }
}

pub fn hospital_key(i: usize) -> String {
    format!("hospital-{i}")
}

pub fn residents_key(i: usize) -> String {
    format!("residents-{i}")
}

pub fn isoc_key(agent: AgentId) -> String {
    format!("isoc-{agent}")
}

impl HierarchyConfig {
    /// Root over "regional hospitals" (all hospital communities) and
    /// "emergency response" (all residents communities), with one iSoC per
    /// individual under its residents community.
    pub fn scenario(layout: &ScenarioLayout) -> Self {
        let mut next = layout.first_coordinator.0;
        let mut coordinator = || {
            let a = AgentId(next);
            next += 1;
            a
        };
        let root_rep = coordinator();
        let regional_rep = coordinator();
        let er_rep = coordinator();
        let hospital_reps: Vec<AgentId> = layout.hospitals.iter().map(|_| coordinator()).collect();
        let residents_reps: Vec<AgentId> = layout.residents.iter().map(|_| coordinator()).collect();

        let mut nodes = vec![
            NodeSpec {
                key: "root".into(),
                kind: CommunityKind::Root,
                parent: None,
                representative: root_rep,
                members: vec![root_rep, regional_rep, er_rep],
            },
            NodeSpec {
                key: "regional-hospitals".into(),
                kind: CommunityKind::RegionalHospitals,
                parent: Some("root".into()),
                representative: regional_rep,
                members: std::iter::once(regional_rep).chain(hospital_reps.iter().copied()).collect(),
            },
            NodeSpec {
                key: "emergency-response".into(),
                kind: CommunityKind::EmergencyResponse,
                parent: Some("root".into()),
                representative: er_rep,
                members: std::iter::once(er_rep).chain(residents_reps.iter().copied()).collect(),
            },
        ];
        for (i, (rep, staff)) in hospital_reps.iter().zip(&layout.hospitals).enumerate() {
            nodes.push(NodeSpec {
                key: hospital_key(i),
                kind: CommunityKind::Hospital,
                parent: Some("regional-hospitals".into()),
                representative: *rep,
                members: std::iter::once(*rep).chain(staff.iter().copied()).collect(),
            });
        }
        for (i, (rep, people)) in residents_reps.iter().zip(&layout.residents).enumerate() {
            nodes.push(NodeSpec {
                key: residents_key(i),
                kind: CommunityKind::Residents,
                parent: Some("emergency-response".into()),
                representative: *rep,
                members: std::iter::once(*rep).chain(people.iter().copied()).collect(),
            });
        }
        for (i, people) in layout.residents.iter().enumerate() {
            for p in people {
                nodes.push(NodeSpec {
                    key: isoc_key(*p),
                    kind: CommunityKind::Individual,
                    parent: Some(residents_key(i)),
                    representative: *p,
                    members: vec![*p],
                });
            }
        }
        Self { nodes }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityNode {
    pub id: CommunityId,
    pub key: String,
    pub kind: CommunityKind,
    /// Distance from the bottom of the tree: `height - depth`.
    pub level: usize,
    pub depth: usize,
    pub representative: AgentId,
    pub parent: Option<CommunityId>,
    pub children: BTreeSet<CommunityId>,
    pub member_agents: BTreeSet<AgentId>,
    pub pending_notifications: Vec<Notification>,
    /// Actions registered at this node, re-matched on every publication.
    pub waiting_actions: Vec<ActionTemplate>,
}

/// Result of a publication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub notification: NotificationId,
    pub community: CommunityId,
    /// Waiting actions that the publication enabled.
    pub resolved: Vec<ResolvedAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    nodes: Vec<CommunityNode>,
    root: CommunityId,
    height: usize,
    next_notification: u64,
}

impl Hierarchy {
    pub fn build(config: &HierarchyConfig) -> Result<Self, ProtocolError> {
        let mut index = BTreeMap::new();
        for (i, spec) in config.nodes.iter().enumerate() {
            if index.insert(spec.key.as_str(), i).is_some() {
                return Err(ProtocolError::DuplicateNode(spec.key.clone()));
            }
        }
        let mut parents = Vec::with_capacity(config.nodes.len());
        for spec in &config.nodes {
            let parent = match &spec.parent {
                None => None,
                Some(p) => Some(*index.get(p.as_str()).ok_or_else(|| ProtocolError::OrphanNode {
                    node: spec.key.clone(),
                    parent: p.clone(),
                })?),
            };
            parents.push(parent);
        }
        let roots: Vec<usize> = (0..parents.len()).filter(|i| parents[*i].is_none()).collect();
        if roots.len() != 1 {
            return Err(ProtocolError::RootCount(roots.len()));
        }
        let n = config.nodes.len();
        let mut depths = vec![0usize; n];
        for (i, depth) in depths.iter_mut().enumerate() {
            let mut cur = i;
            let mut d = 0;
            while let Some(p) = parents[cur] {
                cur = p;
                d += 1;
                if d > n {
                    return Err(ProtocolError::Cycle(config.nodes[i].key.clone()));
                }
            }
            *depth = d;
        }
        for spec in &config.nodes {
            if !spec.members.contains(&spec.representative) {
                return Err(ProtocolError::RepresentativeNotMember(spec.key.clone()));
            }
        }
        let height = depths.iter().copied().max().unwrap_or(0);
        let mut nodes: Vec<CommunityNode> = config
            .nodes
            .iter()
            .enumerate()
            .map(|(i, spec)| CommunityNode {
                id: CommunityId(i as u32),
                key: spec.key.clone(),
                kind: spec.kind,
                level: height - depths[i],
                depth: depths[i],
                representative: spec.representative,
                parent: parents[i].map(|p| CommunityId(p as u32)),
                children: BTreeSet::new(),
                member_agents: spec.members.iter().copied().collect(),
                pending_notifications: Vec::new(),
                waiting_actions: Vec::new(),
            })
            .collect();
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                nodes[*p].children.insert(CommunityId(i as u32));
            }
        }
        Ok(Self { nodes, root: CommunityId(roots[0] as u32), height, next_notification: 0 })
    }

    pub fn root(&self) -> CommunityId {
        self.root
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[CommunityNode] {
        &self.nodes
    }

    pub fn node(&self, id: CommunityId) -> Result<&CommunityNode, ProtocolError> {
        self.nodes.get(id.index()).ok_or(ProtocolError::UnknownCommunity(id))
    }

    fn node_mut(&mut self, id: CommunityId) -> Result<&mut CommunityNode, ProtocolError> {
        self.nodes.get_mut(id.index()).ok_or(ProtocolError::UnknownCommunity(id))
    }

    pub fn find(&self, key: &str) -> Option<CommunityId> {
        self.nodes.iter().find(|n| n.key == key).map(|n| n.id)
    }

    pub fn key(&self, id: CommunityId) -> &str {
        self.nodes.get(id.index()).map_or("?", |n| n.key.as_str())
    }

    pub fn parent(&self, id: CommunityId) -> Option<CommunityId> {
        self.nodes.get(id.index()).and_then(|n| n.parent)
    }

    /// Pre-order listing of `id` and all its descendants.
    pub fn subtree(&self, id: CommunityId) -> Vec<CommunityId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(c) = stack.pop() {
            out.push(c);
            if let Some(node) = self.nodes.get(c.index()) {
                stack.extend(node.children.iter().rev().copied());
            }
        }
        out
    }

    /// Appends a notification to `node` and re-matches the node's waiting actions.
    pub fn publish(
        &mut self,
        node: CommunityId,
        origin: AgentId,
        kind: NotificationKind,
        roles: Vec<Role>,
        created_at: Tick,
    ) -> Result<Receipt, ProtocolError> {
        let id = NotificationId(self.next_notification);
        let target = self.node_mut(node)?;
        if !target.member_agents.contains(&origin) {
            return Err(ProtocolError::NotAMember { agent: origin, community: node });
        }
        target.pending_notifications.push(Notification { id, origin_agent: origin, kind, roles, created_at });
        self.next_notification += 1;
        let resolved = if self.nodes[node.index()].waiting_actions.is_empty() {
            Vec::new()
        } else {
            let waiting = std::mem::take(&mut self.nodes[node.index()].waiting_actions);
            let resolved = self.match_pending(node, &waiting)?;
            let done: BTreeSet<_> = resolved.iter().map(|r| r.template.id).collect();
            self.nodes[node.index()].waiting_actions = waiting.into_iter().filter(|t| !done.contains(&t.id)).collect();
            resolved
        };
        Ok(Receipt { notification: id, community: node, resolved })
    }

    /// Registers an action at `node`; it fires immediately if possible,
    /// otherwise on a later publication.
    pub fn register_action(
        &mut self,
        node: CommunityId,
        template: ActionTemplate,
    ) -> Result<Option<ResolvedAction>, ProtocolError> {
        let mut resolved = self.match_pending(node, std::slice::from_ref(&template))?;
        if resolved.is_empty() {
            self.node_mut(node)?.waiting_actions.push(template);
            Ok(None)
        } else {
            Ok(resolved.pop())
        }
    }

    /// Fills `templates` in order from the availabilities pending at `node`
    /// itself, first-come first-served, and consumes what the resolved ones used.
    pub fn match_pending(
        &mut self,
        node: CommunityId,
        templates: &[ActionTemplate],
    ) -> Result<Vec<ResolvedAction>, ProtocolError> {
        let candidates = self.candidates(&[node], &|_| 0)?;
        let resolved = matching::fill_templates(templates, &candidates);
        for r in &resolved {
            self.commit(r)?;
        }
        Ok(resolved)
    }

    /// Pending availabilities under `scope`, ordered by `(priority(source), arrival)`.
    pub(crate) fn candidates(
        &self,
        scope: &[CommunityId],
        priority: &dyn Fn(CommunityId) -> u64,
    ) -> Result<Vec<(CommunityId, &Notification)>, ProtocolError> {
        let mut out = Vec::new();
        for c in scope {
            let node = self.node(*c)?;
            out.extend(
                node.pending_notifications
                    .iter()
                    .filter(|n| n.kind == NotificationKind::Availability)
                    .map(|n| (*c, n)),
            );
        }
        out.sort_by_key(|(c, n)| (priority(*c), n.id));
        Ok(out)
    }

    /// Removes the availabilities a resolution consumed.
    pub fn commit(&mut self, resolved: &ResolvedAction) -> Result<(), ProtocolError> {
        for (community, id) in &resolved.consumed {
            let node = self.node_mut(*community)?;
            let pos = node
                .pending_notifications
                .iter()
                .position(|n| n.id == *id)
                .ok_or(ProtocolError::StaleNotification(*id))?;
            node.pending_notifications.remove(pos);
        }
        Ok(())
    }

    /// Drops every pending notification of `kind` published by `agent` at `node`.
    pub fn withdraw(
        &mut self,
        node: CommunityId,
        agent: AgentId,
        kind: NotificationKind,
    ) -> Result<usize, ProtocolError> {
        let target = self.node_mut(node)?;
        let before = target.pending_notifications.len();
        target.pending_notifications.retain(|n| !(n.origin_agent == agent && n.kind == kind));
        Ok(before - target.pending_notifications.len())
    }

    pub fn has_pending(&self, node: CommunityId, agent: AgentId, kind: NotificationKind) -> bool {
        self.nodes
            .get(node.index())
            .is_some_and(|n| n.pending_notifications.iter().any(|p| p.origin_agent == agent && p.kind == kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(individuals: u32, hospitals: usize, residents: usize) -> ScenarioLayout {
        let mut r = vec![Vec::new(); residents];
        for i in 0..individuals {
            r[i as usize % residents].push(AgentId(i));
        }
        let mut next = individuals;
        let hs = (0..hospitals)
            .map(|_| {
                next += 1;
                vec![AgentId(next - 1)]
            })
            .collect();
        ScenarioLayout { hospitals: hs, residents: r, first_coordinator: AgentId(1000) }
    }

    #[test]
    fn default_scenario_shape() {
        let h = Hierarchy::build(&HierarchyConfig::scenario(&layout(100, 4, 2))).unwrap();
        assert_eq!(h.len(), 3 + 4 + 2 + 100);
        assert_eq!(h.height(), 3);
        let root = h.node(h.root()).unwrap();
        assert_eq!(root.level, 3);
        let regional = h.find("regional-hospitals").unwrap();
        let node = h.node(regional).unwrap();
        assert_eq!(node.children.len(), 4);
        for c in &node.children {
            let hospital = h.node(*c).unwrap();
            assert_eq!(hospital.kind, CommunityKind::Hospital);
            assert!(hospital.children.is_empty());
        }
        let isoc = h.find("isoc-7").unwrap();
        let n = h.node(isoc).unwrap();
        assert_eq!(n.level, 0);
        assert_eq!(n.representative, AgentId(7));
        let levels: BTreeSet<usize> = h.nodes().iter().map(|n| n.level).collect();
        assert_eq!(levels, (0..=3).collect());
    }

    #[test]
    fn minimal_chain_reaches_hospital_within_four_hops() {
        let mut h = Hierarchy::build(&HierarchyConfig::scenario(&layout(1, 1, 1))).unwrap();
        assert_eq!(h.len(), 6);
        let isoc = h.find("isoc-0").unwrap();
        let hospital = h.find("hospital-0").unwrap();
        h.publish(hospital, AgentId(1), NotificationKind::Availability, vec![Role::MinorDoctor], 0).unwrap();
        let t = ActionTemplate::new(super::super::ActionId(0), vec![Role::MinorDoctor, Role::Patient(1)], true)
            .with_host(hospital)
            .prefill(Role::Patient(1), AgentId(0));
        let e = h.route_request(isoc, hospital, &t, 8, &|_| 0).unwrap();
        assert!(e.resolved.is_some());
        assert_eq!(e.trace.path.last(), Some(&hospital));
        assert!(e.trace.hops <= 4);
    }

    #[test]
    fn malformed_topologies_are_rejected() {
        let spec = |key: &str, parent: Option<&str>| NodeSpec {
            key: key.into(),
            kind: CommunityKind::Other,
            parent: parent.map(Into::into),
            representative: AgentId(0),
            members: vec![AgentId(0)],
        };
        let cycle = HierarchyConfig {
            nodes: vec![spec("root", None), spec("a", Some("b")), spec("b", Some("a"))],
        };
        assert!(matches!(Hierarchy::build(&cycle), Err(ProtocolError::Cycle(_))));
        let orphan = HierarchyConfig { nodes: vec![spec("root", None), spec("a", Some("nowhere"))] };
        assert!(matches!(Hierarchy::build(&orphan), Err(ProtocolError::OrphanNode { .. })));
        let dup = HierarchyConfig { nodes: vec![spec("root", None), spec("a", Some("root")), spec("a", Some("a"))] };
        assert!(matches!(Hierarchy::build(&dup), Err(ProtocolError::DuplicateNode(_))));
        let two_roots = HierarchyConfig { nodes: vec![spec("r1", None), spec("r2", None)] };
        assert_eq!(Hierarchy::build(&two_roots), Err(ProtocolError::RootCount(2)));
        let mut bad_rep = spec("root", None);
        bad_rep.representative = AgentId(9);
        assert!(matches!(
            Hierarchy::build(&HierarchyConfig { nodes: vec![bad_rep] }),
            Err(ProtocolError::RepresentativeNotMember(_))
        ));
    }

    #[test]
    fn publish_stores_at_target_and_checks_membership() {
        let mut h = Hierarchy::build(&HierarchyConfig::scenario(&layout(4, 2, 2))).unwrap();
        let hospital = h.find("hospital-0").unwrap();
        let doctor = AgentId(4);
        let r = h
            .publish(hospital, doctor, NotificationKind::Availability, vec![Role::MinorDoctor], 0)
            .unwrap();
        assert!(r.resolved.is_empty());
        assert_eq!(h.node(hospital).unwrap().pending_notifications.len(), 1);

        // Individual 2 lives in residents-0; its request lands at the residents community.
        let residents = h.find("residents-0").unwrap();
        h.publish(residents, AgentId(2), NotificationKind::ServiceRequest, vec![Role::MinorDoctor], 3)
            .unwrap();
        let stored = &h.node(residents).unwrap().pending_notifications;
        assert_eq!(stored.len(), 1);
        assert_eq!(stored[0].origin_agent, AgentId(2));

        let err = h.publish(hospital, AgentId(2), NotificationKind::Availability, vec![], 0);
        assert_eq!(err, Err(ProtocolError::NotAMember { agent: AgentId(2), community: hospital }));
        let err = h.publish(CommunityId(999), doctor, NotificationKind::Availability, vec![], 0);
        assert_eq!(err, Err(ProtocolError::UnknownCommunity(CommunityId(999))));
    }

    #[test]
    fn waiting_action_fires_on_publication() {
        let mut h = Hierarchy::build(&HierarchyConfig::scenario(&layout(2, 1, 1))).unwrap();
        let hospital = h.find("hospital-0").unwrap();
        let t = ActionTemplate::new(super::super::ActionId(1), vec![Role::MinorDoctor], true);
        assert_eq!(h.register_action(hospital, t).unwrap(), None);
        let r = h
            .publish(hospital, AgentId(2), NotificationKind::Availability, vec![Role::MinorDoctor], 5)
            .unwrap();
        assert_eq!(r.resolved.len(), 1);
        assert!(h.node(hospital).unwrap().pending_notifications.is_empty());
        assert!(h.node(hospital).unwrap().waiting_actions.is_empty());
    }
}
