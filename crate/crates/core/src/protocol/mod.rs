//! Fractal coordination protocol: a tree of service-oriented communities whose
//! representatives match published notifications against action templates,
//! escalate unresolved critical actions to their higher-ups, and assemble
//! temporary overlay communities (SONs) to execute resolved actions.
//!
//! Matching is exact role-tag equality over pending availability
//! notifications, first-come first-served. Planning (`raise_exception`,
//! `route_request`, `plan_in_subtree`) never mutates the hierarchy; the
//! caller commits a chosen resolution with [`Hierarchy::commit`].

mod hierarchy;
mod matching;
mod son;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::AgentId;
use crate::Tick;

pub use hierarchy::{
    hospital_key, isoc_key, residents_key, CommunityKind, CommunityNode, Hierarchy, HierarchyConfig, NodeSpec, Receipt,
    ScenarioLayout,
};
pub use matching::{fill_templates, Escalation, ResolvedAction};
pub use son::{elect_coordinator, Dismissal, Son, SonId, SonRegistry};

/// Default maximum number of escalation hops.
pub const DEFAULT_FLOODING_THRESHOLD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommunityId(pub u32);

impl CommunityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CommunityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NotificationId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub u32);

/// A class of activities an agent agrees to perform. Compared by exact equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Patient(u8),
    ExpertDoctor(u8),
    MinorDoctor,
    Ambulance,
    Appliance(u8),
    WalkCompanion,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Patient(d) => write!(f, "patient({d})"),
            Role::ExpertDoctor(d) => write!(f, "expert_doctor({d})"),
            Role::MinorDoctor => f.write_str("minor_doctor"),
            Role::Ambulance => f.write_str("ambulance"),
            Role::Appliance(d) => write!(f, "appliance({d})"),
            Role::WalkCompanion => f.write_str("walk_companion"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NotificationKind {
    ServiceRequest,
    Availability,
    Status,
}

impl NotificationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NotificationKind::ServiceRequest => "service_request",
            NotificationKind::Availability => "availability",
            NotificationKind::Status => "status",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub id: NotificationId,
    pub origin_agent: AgentId,
    pub kind: NotificationKind,
    /// Offered roles for availabilities (the agent fills at most one of them),
    /// required roles for service requests.
    pub roles: Vec<Role>,
    pub created_at: Tick,
}

/// Who filled a role slot, and from which community's availabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFill {
    pub agent: AgentId,
    /// `None` for slots filled up front (e.g. the requester as patient).
    pub source: Option<CommunityId>,
    pub notification: Option<NotificationId>,
}

/// Reservation-station record: fires once every required role slot is filled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTemplate {
    pub id: ActionId,
    pub required_roles: Vec<Role>,
    pub critical: bool,
    pub filled: Vec<Option<SlotFill>>,
    /// Community where the action executes; it counts as one of the SON's
    /// source communities whenever any slot is filled.
    pub host: Option<CommunityId>,
}

impl ActionTemplate {
    pub fn new(id: ActionId, required_roles: Vec<Role>, critical: bool) -> Self {
        let filled = vec![None; required_roles.len()];
        Self { id, required_roles, critical, filled, host: None }
    }

    pub fn with_host(mut self, host: CommunityId) -> Self {
        self.host = Some(host);
        self
    }

    /// Fills the first empty slot for `role` up front, with no source community.
    pub fn prefill(mut self, role: Role, agent: AgentId) -> Self {
        if let Some(i) = self
            .required_roles
            .iter()
            .zip(&self.filled)
            .position(|(r, f)| *r == role && f.is_none())
        {
            self.filled[i] = Some(SlotFill { agent, source: None, notification: None });
        }
        self
    }

    pub fn is_resolved(&self) -> bool {
        self.filled.iter().all(Option::is_some)
    }

    pub fn missing_roles(&self) -> Vec<Role> {
        self.required_roles
            .iter()
            .zip(&self.filled)
            .filter(|(_, f)| f.is_none())
            .map(|(r, _)| *r)
            .collect()
    }

    /// Drops every fill that came from a notification, keeping prefilled slots.
    pub fn cleared(&self) -> Self {
        let mut t = self.clone();
        for f in &mut t.filled {
            if f.is_some_and(|s| s.notification.is_some()) {
                *f = None;
            }
        }
        t
    }

    pub fn filler(&self, role: Role) -> Option<SlotFill> {
        self.required_roles
            .iter()
            .zip(&self.filled)
            .find(|(r, _)| **r == role)
            .and_then(|(_, f)| *f)
    }

    pub fn agents(&self) -> BTreeSet<AgentId> {
        self.filled.iter().flatten().map(|f| f.agent).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EscalationOutcome {
    ResolvedLocally,
    ResolvedViaSon,
    Failed,
}

impl EscalationOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            EscalationOutcome::ResolvedLocally => "resolved_locally",
            EscalationOutcome::ResolvedViaSon => "resolved_via_son",
            EscalationOutcome::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationTrace {
    pub path: Vec<CommunityId>,
    pub hops: usize,
    pub outcome: EscalationOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("duplicate community node `{0}`")]
    DuplicateNode(String),
    #[error("community `{node}` names unknown parent `{parent}`")]
    OrphanNode { node: String, parent: String },
    #[error("hierarchy must have exactly one root, found {0}")]
    RootCount(usize),
    #[error("hierarchy contains a cycle through `{0}`")]
    Cycle(String),
    #[error("representative of `{0}` is not one of its members")]
    RepresentativeNotMember(String),
    #[error("unknown community {0}")]
    UnknownCommunity(CommunityId),
    #[error("agent {agent} is not a member of community {community}")]
    NotAMember { agent: AgentId, community: CommunityId },
    #[error("exceptions are only raised for critical actions")]
    NotCritical,
    #[error("action is not fully resolved")]
    Unresolved,
    #[error("agent {0} already belongs to a live SON")]
    DoubleAllocation(AgentId),
    #[error("cannot elect a coordinator from an empty member set")]
    EmptyMembers,
    #[error("SON {son} dissolves at tick {dissolves_at}, dismissal attempted at {now}")]
    PrematureDismissal { son: u32, dissolves_at: Tick, now: Tick },
    #[error("unknown SON {0}")]
    UnknownSon(u32),
    #[error("notification {0:?} is no longer pending")]
    StaleNotification(NotificationId),
}
