use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::hierarchy::Hierarchy;
use super::matching::ResolvedAction;
use super::{ActionId, CommunityId, ProtocolError};
use crate::domain::AgentId;
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SonId(pub u32);

/// Temporary community executing one resolved action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Son {
    pub id: SonId,
    pub member_agents: BTreeSet<AgentId>,
    pub source_communities: BTreeSet<CommunityId>,
    /// Community each member was drawn from (absent for prefilled members).
    pub member_sources: BTreeMap<AgentId, CommunityId>,
    pub host: Option<CommunityId>,
    pub coordinator: AgentId,
    pub action: ActionId,
    pub created_at: Tick,
    pub dissolves_at: Tick,
}

impl Son {
    pub fn is_inter_community(&self) -> bool {
        self.source_communities.len() >= 2
    }

    /// Members drawn from a community other than the host.
    pub fn borrowed(&self) -> impl Iterator<Item = (AgentId, CommunityId)> + '_ {
        self.member_sources
            .iter()
            .filter(move |(_, c)| Some(**c) != self.host)
            .map(|(a, c)| (*a, *c))
    }
}

/// Members freed by a dismissal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dismissal {
    pub son: Son,
    /// Members that are free right away.
    pub local: Vec<AgentId>,
    /// Members that must travel back to their home community.
    pub borrowed: Vec<(AgentId, CommunityId)>,
}

/// The coordinator of a SON is the representative of the community hosting
/// the action; without a host, the lowest-id source community's representative.
pub fn elect_coordinator(
    hierarchy: &Hierarchy,
    members: &BTreeSet<AgentId>,
    source_communities: &BTreeSet<CommunityId>,
    host: Option<CommunityId>,
) -> Result<AgentId, ProtocolError> {
    if members.is_empty() {
        return Err(ProtocolError::EmptyMembers);
    }
    match host.or_else(|| source_communities.first().copied()) {
        Some(c) => Ok(hierarchy.node(c)?.representative),
        None => Ok(*members.first().expect("non-empty")),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SonRegistry {
    live: BTreeMap<SonId, Son>,
    membership: BTreeMap<AgentId, SonId>,
    next: u32,
    formed_inter: u64,
    formed_infra: u64,
}

impl SonRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn form_son(
        &mut self,
        hierarchy: &Hierarchy,
        resolved: &ResolvedAction,
        now: Tick,
        dissolves_at: Tick,
    ) -> Result<Son, ProtocolError> {
        if !resolved.template.is_resolved() {
            return Err(ProtocolError::Unresolved);
        }
        let members = resolved.template.agents();
        if let Some(busy) = members.iter().find(|a| self.membership.contains_key(a)) {
            return Err(ProtocolError::DoubleAllocation(*busy));
        }
        let coordinator = elect_coordinator(hierarchy, &members, &resolved.sources, resolved.template.host)?;
        let member_sources = resolved
            .template
            .filled
            .iter()
            .flatten()
            .filter_map(|f| f.source.map(|s| (f.agent, s)))
            .collect();
        let son = Son {
            id: SonId(self.next),
            member_agents: members,
            source_communities: resolved.sources.clone(),
            member_sources,
            host: resolved.template.host,
            coordinator,
            action: resolved.template.id,
            created_at: now,
            dissolves_at: dissolves_at.max(now),
        };
        self.next += 1;
        if son.is_inter_community() {
            self.formed_inter += 1;
        } else {
            self.formed_infra += 1;
        }
        for a in &son.member_agents {
            self.membership.insert(*a, son.id);
        }
        self.live.insert(son.id, son.clone());
        Ok(son)
    }

    /// Releases one member early (e.g. an ambulance after delivery).
    pub fn release_member(&mut self, agent: AgentId) -> Option<SonId> {
        let id = self.membership.remove(&agent)?;
        if let Some(son) = self.live.get_mut(&id) {
            son.member_agents.remove(&agent);
            son.member_sources.remove(&agent);
        }
        Some(id)
    }

    /// Brings the dissolution forward, e.g. when the action is abandoned.
    pub fn cut_short(&mut self, id: SonId, now: Tick) -> Result<(), ProtocolError> {
        let son = self.live.get_mut(&id).ok_or(ProtocolError::UnknownSon(id.0))?;
        son.dissolves_at = son.dissolves_at.min(now);
        Ok(())
    }

    pub fn dismiss_son(&mut self, id: SonId, now: Tick) -> Result<Dismissal, ProtocolError> {
        let son = self.live.get(&id).ok_or(ProtocolError::UnknownSon(id.0))?;
        if now < son.dissolves_at {
            return Err(ProtocolError::PrematureDismissal { son: id.0, dissolves_at: son.dissolves_at, now });
        }
        let son = self.live.remove(&id).expect("checked above");
        for a in &son.member_agents {
            self.membership.remove(a);
        }
        let borrowed: Vec<_> = son.borrowed().collect();
        let local = son
            .member_agents
            .iter()
            .copied()
            .filter(|a| !borrowed.iter().any(|(b, _)| b == a))
            .collect();
        Ok(Dismissal { son, local, borrowed })
    }

    pub fn get(&self, id: SonId) -> Option<&Son> {
        self.live.get(&id)
    }

    pub fn live(&self) -> impl Iterator<Item = &Son> {
        self.live.values()
    }

    pub fn son_of(&self, agent: AgentId) -> Option<SonId> {
        self.membership.get(&agent).copied()
    }

    pub fn formed_inter(&self) -> u64 {
        self.formed_inter
    }

    pub fn formed_infra(&self) -> u64 {
        self.formed_infra
    }
}
