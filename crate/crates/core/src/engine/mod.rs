//! The discrete-time simulation loop.

pub mod activity;
pub mod events;
pub mod log;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use self::activity::{pair_walkers, schedule_activity, WalkRequest};
use self::events::{Event, EventQueue};
use self::log::EventLog;
use crate::domain::{
    distribute_resources, sample_disease, validate_expertise, AgentId, Ambulance, AmbulanceId, Appliance, ApplianceId,
    Disease, DomainError, Doctor, DoctorId, Hospital, HospitalId, Individual, IndividualId, IndividualState, RequestId,
    ResourceCounts, SEVERE_DISEASES,
};
use crate::geometry::{travel_time, GeometryError};
use crate::metrics::{MetricsAccumulator, RunMetrics};
use crate::protocol::{
    hospital_key, isoc_key,
    Hierarchy, HierarchyConfig, NotificationKind, ProtocolError, Role, ScenarioLayout, SonRegistry,
    DEFAULT_FLOODING_THRESHOLD,
};
use crate::rng::RngStreams;
use crate::strategies::{handle_request, Convergence, Outcome, RequestRecord, Stage, Step, StrategyKind};
use crate::{Bounds, Position, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid config `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { key: key.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("individual {0} is not idle")]
    NotIdle(IndividualId),
    #[error("office deadline {deadline} already passed at tick {now}")]
    DeadlinePassed { deadline: Tick, now: Tick },
    #[error("individual {0} cannot fall sick in its current state")]
    CannotFallSick(IndividualId),
    #[error("agent {agent} is already held by request {holder}")]
    DoubleAllocation { agent: AgentId, holder: RequestId },
    #[error("agent {0} is not a hospital resource")]
    NotAResource(AgentId),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub width: f64,
    pub height: f64,
    pub n_hospitals: usize,
    pub n_doctors: usize,
    pub n_ambulances: usize,
    pub n_appliances: usize,
    pub n_individuals: usize,
    pub n_residents_communities: usize,
    /// Chance of falling sick at the end of each activity.
    pub sickness_probability: f64,
    pub threshold_ticks: Tick,
    pub total_ticks: Tick,
    pub strategy: StrategyKind,
    pub flooding_threshold: usize,
    pub individual_speed: f64,
    pub ambulance_speed: f64,
    /// Inclusive bounds of activity durations.
    pub activity_ticks: (Tick, Tick),
    /// Inclusive bounds of treatment durations.
    pub treatment_ticks: (Tick, Tick),
    pub log_events: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 100.0,
            height: 100.0,
            n_hospitals: 4,
            n_doctors: 15,
            n_ambulances: 8,
            n_appliances: 70,
            n_individuals: 100,
            n_residents_communities: 2,
            sickness_probability: 0.09,
            threshold_ticks: 250,
            total_ticks: 3000,
            strategy: StrategyKind::Fso,
            flooding_threshold: DEFAULT_FLOODING_THRESHOLD,
            individual_speed: 0.5,
            ambulance_speed: 2.0,
            activity_ticks: (100, 200),
            treatment_ticks: (20, 60),
            log_events: false,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::new(key, format!("must be a positive number, got {v}")))
            }
        };
        positive("width", self.width)?;
        positive("height", self.height)?;
        positive("individual_speed", self.individual_speed)?;
        positive("ambulance_speed", self.ambulance_speed)?;
        if self.n_hospitals == 0 {
            return Err(ConfigError::new("n_hospitals", "at least one hospital is required"));
        }
        if self.n_residents_communities == 0 {
            return Err(ConfigError::new("n_residents_communities", "at least one residents community is required"));
        }
        if !(0.0..=1.0).contains(&self.sickness_probability) {
            return Err(ConfigError::new(
                "sickness_probability",
                format!("must lie in [0, 1], got {}", self.sickness_probability),
            ));
        }
        let (lo, hi) = self.activity_ticks;
        if lo == 0 || lo > hi {
            return Err(ConfigError::new("activity_ticks", format!("need 1 <= min <= max, got {lo}..{hi}")));
        }
        let (lo, hi) = self.treatment_ticks;
        if lo == 0 || lo > hi {
            return Err(ConfigError::new("treatment_ticks", format!("need 1 <= min <= max, got {lo}..{hi}")));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Bounds {
        Bounds { width: self.width, height: self.height }
    }
}

/// Hospitals at the quadrant centres when there are four, otherwise evenly
/// spaced on a centred circle of radius 35 (shrunk to fit small grids).
pub fn hospital_positions(n: usize, bounds: &Bounds) -> Vec<Position> {
    if n == 4 {
        let (w, h) = (bounds.width, bounds.height);
        return vec![
            Position::new(w * 0.25, h * 0.25),
            Position::new(w * 0.75, h * 0.25),
            Position::new(w * 0.25, h * 0.75),
            Position::new(w * 0.75, h * 0.75),
        ];
    }
    let c = bounds.center();
    let r = 35.0_f64.min(0.4 * bounds.width.min(bounds.height));
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            Position::new(c.x + r * a.cos(), c.y + r * a.sin())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalSpec {
    pub position: Position,
    pub doctors: Vec<[u8; 3]>,
    pub ambulances: usize,
    /// Disease type of each appliance.
    pub appliances: Vec<u8>,
}

/// Explicit placement of every hospital, resource and individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldLayout {
    pub hospitals: Vec<HospitalSpec>,
    pub individuals: Vec<Position>,
}

impl WorldLayout {
    /// Draws the layout of a run from the placement, expertise and movement streams.
    pub fn generate(config: &WorldConfig, streams: &mut RngStreams) -> Result<Self, EngineError> {
        config.validate()?;
        let counts = ResourceCounts {
            doctors: config.n_doctors,
            ambulances: config.n_ambulances,
            appliances: config.n_appliances,
        };
        let assignment =
            distribute_resources(&mut streams.resource_placement, &mut streams.expertise, counts, config.n_hospitals)?;
        let bounds = config.bounds();
        let mut hospitals: Vec<HospitalSpec> = hospital_positions(config.n_hospitals, &bounds)
            .into_iter()
            .map(|position| HospitalSpec { position, doctors: Vec::new(), ambulances: 0, appliances: Vec::new() })
            .collect();
        for (h, e) in &assignment.doctors {
            hospitals[*h].doctors.push(*e);
        }
        for h in &assignment.ambulances {
            hospitals[*h].ambulances += 1;
        }
        for (h, d) in &assignment.appliances {
            hospitals[*h].appliances.push(*d);
        }
        let individuals = (0..config.n_individuals)
            .map(|_| {
                let x = streams.movement.gen_range(0.0..bounds.width);
                let y = streams.movement.gen_range(0.0..bounds.height);
                Position::new(x, y)
            })
            .collect();
        Ok(Self { hospitals, individuals })
    }
}

/// What a hospital resource agent is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResourceRef {
    Doctor(DoctorId),
    Ambulance(AmbulanceId),
    Appliance(ApplianceId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub activity_completions: u64,
    pub sickness_events: u64,
}

/// Full simulation state of one run.
#[derive(Debug, Clone, Serialize)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub clock: Tick,
    pub hospitals: Vec<Hospital>,
    pub doctors: Vec<Doctor>,
    pub ambulances: Vec<Ambulance>,
    pub appliances: Vec<Appliance>,
    pub individuals: Vec<Individual>,
    pub requests: Vec<RequestRecord>,
    pub hierarchy: Hierarchy,
    pub sons: SonRegistry,
    pub events: EventQueue,
    pub log: EventLog,
    pub walk_queue: Vec<WalkRequest>,
    pub stats: EngineStats,
    resources: BTreeMap<AgentId, ResourceRef>,
    holders: BTreeMap<AgentId, RequestId>,
    holdings: BTreeMap<RequestId, BTreeSet<AgentId>>,
    open: BTreeSet<RequestId>,
    converging: BTreeMap<RequestId, Convergence>,
    #[serde(skip)]
    rngs: RngStreams,
}

/// Builds the world of `config` for `seed`.
pub fn build_world(config: &WorldConfig, seed: u64) -> Result<World, EngineError> {
    let mut streams = RngStreams::new(seed);
    let layout = WorldLayout::generate(config, &mut streams)?;
    World::assemble(config.clone(), &layout, streams)
}

/// Builds a world with a hand-made layout; counts in `config` are replaced
/// by those of the layout.
pub fn build_world_with_layout(config: &WorldConfig, layout: &WorldLayout, seed: u64) -> Result<World, EngineError> {
    World::assemble(config.clone(), layout, RngStreams::new(seed))
}

/// Builds, runs to the end and returns the metrics.
pub fn run(config: &WorldConfig, seed: u64) -> Result<RunMetrics, EngineError> {
    let mut world = build_world(config, seed)?;
    world.run_to_end()?;
    world.metrics()
}

impl World {
    fn assemble(mut config: WorldConfig, layout: &WorldLayout, rngs: RngStreams) -> Result<Self, EngineError> {
        if layout.hospitals.is_empty() {
            return Err(ConfigError::new("n_hospitals", "at least one hospital is required").into());
        }
        config.n_hospitals = layout.hospitals.len();
        config.n_doctors = layout.hospitals.iter().map(|h| h.doctors.len()).sum();
        config.n_ambulances = layout.hospitals.iter().map(|h| h.ambulances).sum();
        config.n_appliances = layout.hospitals.iter().map(|h| h.appliances.len()).sum();
        config.n_individuals = layout.individuals.len();
        config.validate()?;
        let bounds = config.bounds();
        for p in layout.hospitals.iter().map(|h| &h.position).chain(&layout.individuals) {
            if !bounds.contains(p) {
                return Err(ConfigError::new("layout", format!("position ({}, {}) outside the grid", p.x, p.y)).into());
            }
        }

        let n = layout.individuals.len() as u32;
        let mut next_agent = n;
        let mut resources = BTreeMap::new();
        let mut hospitals = Vec::new();
        let (mut doctors, mut ambulances, mut appliances) = (Vec::new(), Vec::new(), Vec::new());
        let mut staff: Vec<Vec<AgentId>> = Vec::new();
        for (i, spec) in layout.hospitals.iter().enumerate() {
            let hid = HospitalId(i as u32);
            let mut h = Hospital {
                id: hid,
                name: format!("Local hospital {}", hospital_letter(i)),
                position: spec.position,
                community: crate::protocol::CommunityId(0),
                doctors: Vec::new(),
                ambulances: Vec::new(),
                appliances: Vec::new(),
            };
            let mut members = Vec::new();
            let mut agent = || {
                let a = AgentId(next_agent);
                next_agent += 1;
                a
            };
            for e in &spec.doctors {
                let id = DoctorId(doctors.len() as u32);
                let a = agent();
                doctors.push(Doctor { id, agent: a, home_hospital: hid, expertise: validate_expertise(*e)?, busy_until: None });
                resources.insert(a, ResourceRef::Doctor(id));
                h.doctors.push(id);
                members.push(a);
            }
            for _ in 0..spec.ambulances {
                let id = AmbulanceId(ambulances.len() as u32);
                let a = agent();
                ambulances.push(Ambulance { id, agent: a, home_hospital: hid, position: spec.position, busy_until: None });
                resources.insert(a, ResourceRef::Ambulance(id));
                h.ambulances.push(id);
                members.push(a);
            }
            for d in &spec.appliances {
                if !SEVERE_DISEASES.contains(d) {
                    return Err(DomainError::MinorAppliance(*d).into());
                }
                let id = ApplianceId(appliances.len() as u32);
                let a = agent();
                appliances.push(Appliance { id, agent: a, home_hospital: hid, disease_type: *d, busy_until: None });
                resources.insert(a, ResourceRef::Appliance(id));
                h.appliances.push(id);
                members.push(a);
            }
            hospitals.push(h);
            staff.push(members);
        }

        let k = config.n_residents_communities;
        let mut residents = vec![Vec::new(); k];
        for i in 0..n {
            residents[i as usize % k].push(AgentId(i));
        }
        let scenario = ScenarioLayout { hospitals: staff, residents, first_coordinator: AgentId(next_agent) };
        let hierarchy = Hierarchy::build(&HierarchyConfig::scenario(&scenario))?;
        for (i, h) in hospitals.iter_mut().enumerate() {
            h.community = hierarchy.find(&hospital_key(i)).expect("scenario has every hospital");
        }
        let individuals = layout
            .individuals
            .iter()
            .enumerate()
            .map(|(i, p)| Individual {
                id: IndividualId(i as u32),
                agent: AgentId(i as u32),
                position: *p,
                speed: config.individual_speed,
                state: IndividualState::Idle,
                home_isoc: hierarchy.find(&isoc_key(AgentId(i as u32))).expect("scenario has every iSoC"),
                residents: i % k,
                destination: None,
                depart_at: 0,
            })
            .collect();

        let mut world = World {
            log: EventLog::new(config.log_events),
            config,
            seed: rngs.master_seed,
            clock: 0,
            hospitals,
            doctors,
            ambulances,
            appliances,
            individuals,
            requests: Vec::new(),
            hierarchy,
            sons: SonRegistry::new(),
            events: EventQueue::new(),
            walk_queue: Vec::new(),
            stats: EngineStats::default(),
            resources,
            holders: BTreeMap::new(),
            holdings: BTreeMap::new(),
            open: BTreeSet::new(),
            converging: BTreeMap::new(),
            rngs,
        };
        let agents: Vec<AgentId> = world.resources.keys().copied().collect();
        for a in agents {
            world.announce(a)?;
        }
        Ok(world)
    }

    pub fn bounds(&self) -> Bounds {
        self.config.bounds()
    }

    pub fn resource_of(&self, agent: AgentId) -> Option<ResourceRef> {
        self.resources.get(&agent).copied()
    }

    pub fn holder_of(&self, agent: AgentId) -> Option<RequestId> {
        self.holders.get(&agent).copied()
    }

    pub fn open_requests(&self) -> impl Iterator<Item = RequestId> + '_ {
        self.open.iter().copied()
    }

    fn busy_until(&self, r: ResourceRef) -> Option<Tick> {
        match r {
            ResourceRef::Doctor(d) => self.doctors[d.index()].busy_until,
            ResourceRef::Ambulance(a) => self.ambulances[a.index()].busy_until,
            ResourceRef::Appliance(a) => self.appliances[a.index()].busy_until,
        }
    }

    fn set_busy_until(&mut self, r: ResourceRef, t: Option<Tick>) {
        match r {
            ResourceRef::Doctor(d) => self.doctors[d.index()].busy_until = t,
            ResourceRef::Ambulance(a) => self.ambulances[a.index()].busy_until = t,
            ResourceRef::Appliance(a) => self.appliances[a.index()].busy_until = t,
        }
    }

    fn home_of(&self, r: ResourceRef) -> HospitalId {
        match r {
            ResourceRef::Doctor(d) => self.doctors[d.index()].home_hospital,
            ResourceRef::Ambulance(a) => self.ambulances[a.index()].home_hospital,
            ResourceRef::Appliance(a) => self.appliances[a.index()].home_hospital,
        }
    }

    fn offered_roles(&self, r: ResourceRef) -> Vec<Role> {
        match r {
            ResourceRef::Doctor(d) => {
                let e = self.doctors[d.index()].expertise;
                vec![Role::MinorDoctor, Role::ExpertDoctor(e[0]), Role::ExpertDoctor(e[1]), Role::ExpertDoctor(e[2])]
            }
            ResourceRef::Ambulance(_) => vec![Role::Ambulance],
            ResourceRef::Appliance(a) => vec![Role::Appliance(self.appliances[a.index()].disease_type)],
        }
    }

    /// Free to take a new assignment at `now`.
    pub fn is_available(&self, agent: AgentId, now: Tick) -> bool {
        match self.resource_of(agent) {
            Some(r) => !self.holders.contains_key(&agent) && self.busy_until(r).is_none_or(|t| t <= now),
            None => false,
        }
    }

    fn ticks_between(&self, a: HospitalId, b: HospitalId) -> Tick {
        let (pa, pb) = (self.hospitals[a.index()].position, self.hospitals[b.index()].position);
        travel_time(&pa, &pb, self.config.ambulance_speed).expect("speed validated")
    }

    /// Publishes the availability of a free resource at its hospital.
    fn announce(&mut self, agent: AgentId) -> Result<(), EngineError> {
        if self.config.strategy != StrategyKind::Fso {
            return Ok(());
        }
        let r = self.resource_of(agent).ok_or(EngineError::NotAResource(agent))?;
        let community = self.hospitals[self.home_of(r).index()].community;
        if self.hierarchy.has_pending(community, agent, NotificationKind::Availability) {
            return Err(EngineError::Invariant(format!("agent {agent} announced twice")));
        }
        let roles = self.offered_roles(r);
        let receipt = self.hierarchy.publish(community, agent, NotificationKind::Availability, roles, self.clock)?;
        if self.log.is_enabled() {
            let key = self.hierarchy.key(community).to_string();
            self.log.protocol(
                self.clock,
                "publish",
                &key,
                &[("agent", agent.to_string()), ("kind", "availability".into()), ("id", receipt.notification.0.to_string())],
            );
        }
        Ok(())
    }

    fn hold(&mut self, agent: AgentId, request: RequestId) -> Result<(), EngineError> {
        if let Some(holder) = self.holders.get(&agent) {
            return Err(EngineError::DoubleAllocation { agent, holder: *holder });
        }
        if !self.is_available(agent, self.clock) {
            return Err(EngineError::Invariant(format!("agent {agent} taken while unavailable")));
        }
        if self.config.strategy == StrategyKind::Fso {
            // Resources picked outside the protocol must not stay advertised.
            let r = self.resource_of(agent).ok_or(EngineError::NotAResource(agent))?;
            let community = self.hospitals[self.home_of(r).index()].community;
            self.hierarchy.withdraw(community, agent, NotificationKind::Availability)?;
        }
        self.holders.insert(agent, request);
        self.holdings.entry(request).or_default().insert(agent);
        Ok(())
    }

    /// Ends `agent`'s assignment at hospital `at`; it is free at once if that
    /// is its home, otherwise once it has travelled back.
    fn release(&mut self, agent: AgentId, at: HospitalId) -> Result<(), EngineError> {
        let r = self.resource_of(agent).ok_or(EngineError::NotAResource(agent))?;
        if let Some(req) = self.holders.remove(&agent) {
            if let Some(set) = self.holdings.get_mut(&req) {
                set.remove(&agent);
                if set.is_empty() {
                    self.holdings.remove(&req);
                }
            }
        }
        let home = self.home_of(r);
        if let ResourceRef::Ambulance(a) = r {
            self.ambulances[a.index()].position = self.hospitals[home.index()].position;
        }
        let back = self.clock + self.ticks_between(at, home);
        if back <= self.clock {
            self.set_busy_until(r, None);
            self.announce(agent)
        } else {
            self.set_busy_until(r, Some(back));
            self.events.schedule(back, Event::ResourceFreed { agent, at: back });
            Ok(())
        }
    }

    fn held_by(&self, request: RequestId) -> Vec<AgentId> {
        self.holdings.get(&request).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }

    /// Makes an idle or active individual sick right now.
    pub fn make_sick(
        &mut self,
        individual: IndividualId,
        disease: Disease,
        treatment_ticks: Tick,
    ) -> Result<RequestId, EngineError> {
        let ind = &mut self.individuals[individual.index()];
        if !matches!(ind.state, IndividualState::Idle | IndividualState::InActivity(_)) {
            return Err(EngineError::CannotFallSick(individual));
        }
        let id = RequestId(self.requests.len() as u32);
        ind.state = IndividualState::Sick(id);
        ind.destination = None;
        let agent = ind.agent;
        self.walk_queue.retain(|w| w.individual != individual);
        self.requests.push(RequestRecord::new(id, individual, disease, self.clock, treatment_ticks));
        self.open.insert(id);
        self.events.schedule(self.clock + self.config.threshold_ticks, Event::DeathDeadline { request: id });
        self.log.lifecycle(
            self.clock,
            "sick",
            agent,
            &[("request", id.to_string()), ("disease", disease.to_string())],
        );
        Ok(id)
    }

    pub fn run_to_end(&mut self) -> Result<(), EngineError> {
        while self.clock < self.config.total_ticks {
            self.step()?;
        }
        Ok(())
    }

    /// Advances the world by one tick.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let mut deadlines = self.drain_events()?;
        self.move_individuals();
        self.complete_activities()?;
        self.schedule_idle()?;
        self.progress_requests()?;
        deadlines.extend(self.drain_events()?);
        for r in deadlines {
            self.check_death(r)?;
        }
        self.clock += 1;
        Ok(())
    }

    /// Runs due events; death deadlines are returned for the last phase.
    fn drain_events(&mut self) -> Result<Vec<RequestId>, EngineError> {
        let mut deadlines = Vec::new();
        while let Some((_, ev)) = self.events.pop_due(self.clock) {
            match ev {
                Event::DeathDeadline { request } => deadlines.push(request),
                Event::PatientArrival { request, hospital } => self.on_arrival(request, hospital)?,
                Event::AllocationComplete { request } => self.on_allocation_complete(request)?,
                Event::TreatmentEnd { request } => self.on_treatment_end(request)?,
                Event::ResourceFreed { agent, at } => {
                    let r = self.resource_of(agent).ok_or(EngineError::NotAResource(agent))?;
                    if self.busy_until(r) == Some(at) && !self.holders.contains_key(&agent) {
                        self.set_busy_until(r, None);
                        self.announce(agent)?;
                    }
                }
            }
        }
        Ok(deadlines)
    }

    fn on_arrival(&mut self, request: RequestId, hospital: HospitalId) -> Result<(), EngineError> {
        let hpos = self.hospitals[hospital.index()].position;
        for agent in self.held_by(request) {
            if let Some(ResourceRef::Ambulance(_)) = self.resource_of(agent) {
                self.sons.release_member(agent);
                self.release(agent, hospital)?;
            }
        }
        let rec = &mut self.requests[request.index()];
        let patient = &mut self.individuals[rec.patient.index()];
        if patient.is_alive() {
            patient.position = hpos;
            patient.destination = None;
        }
        if rec.outcome == Outcome::Pending && rec.stage == Stage::Travelling(hospital) {
            rec.stage = Stage::AtHospital(hospital);
        }
        Ok(())
    }

    fn on_allocation_complete(&mut self, request: RequestId) -> Result<(), EngineError> {
        let rec = &self.requests[request.index()];
        if rec.outcome != Outcome::Pending {
            return Ok(());
        }
        if let Stage::Converging(h) = rec.stage {
            self.start_treatment(request, h);
        }
        Ok(())
    }

    fn start_treatment(&mut self, request: RequestId, hospital: HospitalId) {
        let now = self.clock;
        let rec = &mut self.requests[request.index()];
        rec.qt_end = Some(now);
        rec.tt_end = Some(now + rec.treatment_ticks);
        rec.stage = Stage::InTreatment(hospital);
        rec.treating_hospital = Some(hospital);
        let tt_end = now + rec.treatment_ticks;
        let qt = now - rec.issued_at;
        let patient = &mut self.individuals[rec.patient.index()];
        patient.state = IndividualState::InTreatment(request);
        patient.destination = None;
        let agent = patient.agent;
        self.events.schedule(tt_end, Event::TreatmentEnd { request });
        self.log.lifecycle(
            now,
            "allocated",
            agent,
            &[("request", request.to_string()), ("hospital", hospital.to_string()), ("qt", qt.to_string())],
        );
    }

    fn on_treatment_end(&mut self, request: RequestId) -> Result<(), EngineError> {
        let now = self.clock;
        let Stage::InTreatment(h) = self.requests[request.index()].stage else {
            return Err(EngineError::Invariant(format!("request {request} ended treatment without starting it")));
        };
        if let Some(son) = self.requests[request.index()].son {
            self.dismiss(son)?;
        }
        for agent in self.held_by(request) {
            self.release(agent, h)?;
        }
        self.converging.remove(&request);
        let rec = &mut self.requests[request.index()];
        rec.outcome = Outcome::Treated;
        rec.stage = Stage::Closed;
        self.open.remove(&request);
        let patient = &mut self.individuals[rec.patient.index()];
        patient.state = IndividualState::Idle;
        patient.position = self.hospitals[h.index()].position;
        let agent = patient.agent;
        self.log.lifecycle(now, "treated", agent, &[("request", request.to_string())]);
        Ok(())
    }

    /// Dismisses a SON: local members are free at once, borrowed ones travel
    /// back to their hospital. An ambulance still carrying the patient keeps
    /// its trip and is released on delivery.
    fn dismiss(&mut self, son: crate::protocol::SonId) -> Result<(), EngineError> {
        let now = self.clock;
        let Some(live) = self.sons.get(son) else {
            return Ok(());
        };
        let host = live.host;
        let action = live.action;
        let d = self.sons.dismiss_son(son, now)?;
        let request = RequestId(action.0);
        let at = self
            .hospitals
            .iter()
            .find(|h| Some(h.community) == host)
            .map(|h| h.id)
            .ok_or_else(|| EngineError::Invariant(format!("SON {} has no host hospital", son.0)))?;
        for agent in d.son.member_agents.iter().copied() {
            match self.resource_of(agent) {
                None | Some(ResourceRef::Ambulance(_)) => {}
                Some(_) if self.holders.get(&agent) == Some(&request) => self.release(agent, at)?,
                Some(_) => {}
            }
        }
        if self.log.is_enabled() {
            let key = host.map(|c| self.hierarchy.key(c).to_string()).unwrap_or_default();
            self.log.protocol(
                now,
                "dismiss_son",
                &key,
                &[("son", son.0.to_string()), ("local", d.local.len().to_string()), ("borrowed", d.borrowed.len().to_string())],
            );
        }
        Ok(())
    }

    fn move_individuals(&mut self) {
        let now = self.clock;
        for ind in &mut self.individuals {
            if !ind.is_alive() || now < ind.depart_at {
                continue;
            }
            if let Some(dest) = ind.destination {
                ind.position = ind.position.step_toward(&dest, ind.speed);
                if ind.position == dest {
                    ind.destination = None;
                }
            }
        }
    }

    fn complete_activities(&mut self) -> Result<(), EngineError> {
        let now = self.clock;
        let p = self.config.sickness_probability;
        let (tt_lo, tt_hi) = self.config.treatment_ticks;
        for i in 0..self.individuals.len() {
            let IndividualState::InActivity(a) = &self.individuals[i].state else {
                continue;
            };
            if a.ends_at > now {
                continue;
            }
            self.stats.activity_completions += 1;
            let sickness = &mut self.rngs.sickness;
            if sickness.gen_bool(p) {
                let disease = sample_disease(sickness);
                let tt = sickness.gen_range(tt_lo..=tt_hi);
                self.stats.sickness_events += 1;
                self.make_sick(IndividualId(i as u32), disease, tt)?;
            } else {
                let ind = &mut self.individuals[i];
                ind.state = IndividualState::Idle;
                ind.destination = None;
            }
        }
        Ok(())
    }

    fn schedule_idle(&mut self) -> Result<(), EngineError> {
        let now = self.clock;
        let bounds = self.bounds();
        let durations = self.config.activity_ticks;
        for ind in &mut self.individuals {
            if ind.state != IndividualState::Idle {
                continue;
            }
            let a = schedule_activity(ind, now, &bounds, durations, &mut self.rngs.activities)?;
            if a.wants_company() {
                let wait = (a.ends_at - now) / 4;
                self.walk_queue.push(WalkRequest {
                    individual: ind.id,
                    residents: ind.residents,
                    destination: a.destination,
                    requested_at: now,
                    expires_at: now + wait,
                });
                ind.destination = None;
            } else {
                ind.destination = Some(a.destination);
                ind.depart_at = a.depart_at;
            }
            ind.state = IndividualState::InActivity(a);
        }
        if self.walk_queue.is_empty() {
            return Ok(());
        }
        let pairing = pair_walkers(&self.walk_queue, now);
        for (a, b, dest) in &pairing.pairs {
            for (me, other) in [(a, b), (b, a)] {
                let ind = &mut self.individuals[me.index()];
                ind.destination = Some(*dest);
                ind.depart_at = now;
                if let IndividualState::InActivity(act) = &mut ind.state {
                    act.partner = Some(*other);
                }
            }
        }
        for w in &pairing.solo {
            let ind = &mut self.individuals[w.individual.index()];
            ind.destination = Some(w.destination);
            ind.depart_at = now;
        }
        self.walk_queue = pairing.waiting;
        Ok(())
    }

    fn progress_requests(&mut self) -> Result<(), EngineError> {
        let ids: Vec<RequestId> = self.open.iter().copied().collect();
        let mut rng = self.rngs.strategy_choice.clone();
        for id in ids {
            let rec = &self.requests[id.index()];
            let active = matches!(
                rec.stage,
                Stage::New | Stage::Consulting(_) | Stage::AtHospital(_) | Stage::Escalating
            );
            if rec.outcome != Outcome::Pending || !active {
                continue;
            }
            let steps = handle_request(self, id, &mut rng);
            for s in steps {
                self.apply(id, s)?;
            }
        }
        self.rngs.strategy_choice = rng;
        Ok(())
    }

    fn apply(&mut self, id: RequestId, step: Step) -> Result<(), EngineError> {
        let now = self.clock;
        match step {
            Step::Wait => {}
            Step::Stranded => self.requests[id.index()].stage = Stage::Stranded,
            Step::SetCatalog(c) => self.requests[id.index()].catalog = c,
            Step::Consult(h) => {
                let rec = &mut self.requests[id.index()];
                rec.stage = Stage::Consulting(h);
                rec.visited.push(h);
            }
            Step::Redirect { to, failure } => {
                let rec = &mut self.requests[id.index()];
                if failure {
                    rec.failures += 1;
                } else {
                    rec.redirects += 1;
                }
                rec.stage = Stage::Consulting(to);
                rec.visited.push(to);
            }
            Step::Walk { hospital, arrives_at } => {
                let hpos = self.hospitals[hospital.index()].position;
                let rec = &mut self.requests[id.index()];
                rec.stage = Stage::Travelling(hospital);
                let patient = &mut self.individuals[rec.patient.index()];
                patient.destination = Some(hpos);
                patient.depart_at = now;
                self.events.schedule(arrives_at, Event::PatientArrival { request: id, hospital });
            }
            Step::Dispatch { ambulance, hospital, arrives_at } => {
                self.hold(self.ambulances[ambulance.index()].agent, id)?;
                self.requests[id.index()].stage = Stage::Travelling(hospital);
                self.events.schedule(arrives_at, Event::PatientArrival { request: id, hospital });
            }
            Step::Arrived(h) => self.requests[id.index()].stage = Stage::AtHospital(h),
            Step::Treat { hospital, doctor, appliance } => {
                self.hold(self.doctors[doctor.index()].agent, id)?;
                if let Some(a) = appliance {
                    self.hold(self.appliances[a.index()].agent, id)?;
                }
                self.start_treatment(id, hospital);
            }
            Step::Escalated { host, escalation, plan } => self.apply_escalation(id, host, escalation, plan)?,
        }
        Ok(())
    }

    fn apply_escalation(
        &mut self,
        id: RequestId,
        host: HospitalId,
        escalation: crate::protocol::Escalation,
        plan: Option<Box<Convergence>>,
    ) -> Result<(), EngineError> {
        let now = self.clock;
        let trace = escalation.trace;
        let rec = &mut self.requests[id.index()];
        let first = rec.escalation.is_none();
        let changed = rec.escalation.as_ref().map(|t| t.outcome) != Some(trace.outcome);
        rec.treating_hospital = Some(host);
        rec.stage = Stage::Escalating;
        rec.escalation = Some(trace.clone());
        if self.log.is_enabled() && (first || changed) {
            let path: Vec<&str> = trace.path.iter().map(|c| self.hierarchy.key(*c)).collect();
            let last = path.last().copied().unwrap_or_default().to_string();
            self.log.protocol(
                now,
                "escalate",
                &last,
                &[
                    ("request", id.to_string()),
                    ("hops", trace.hops.to_string()),
                    ("outcome", trace.outcome.as_str().into()),
                    ("path", path.join(">")),
                ],
            );
        }
        let (Some(resolved), Some(plan)) = (escalation.resolved, plan) else {
            return Ok(());
        };
        self.hierarchy.commit(&resolved)?;
        let treatment = self.requests[id.index()].treatment_ticks;
        let son = self.sons.form_son(&self.hierarchy, &resolved, now, plan.qt_end + treatment)?;
        for agent in resolved.template.agents() {
            if self.resource_of(agent).is_some() {
                self.hold(agent, id)?;
            }
        }
        if self.log.is_enabled() {
            let node = self.hierarchy.key(*trace.path.last().expect("non-empty path")).to_string();
            let sources: Vec<String> = son.source_communities.iter().map(|c| self.hierarchy.key(*c).to_string()).collect();
            self.log.protocol(
                now,
                "resolve",
                &node,
                &[("request", id.to_string()), ("qt_end", plan.qt_end.to_string())],
            );
            let host_key = self.hierarchy.key(self.hospitals[host.index()].community).to_string();
            self.log.protocol(
                now,
                "form_son",
                &host_key,
                &[
                    ("son", son.id.0.to_string()),
                    ("members", son.member_agents.len().to_string()),
                    ("sources", sources.join("+")),
                    ("inter", son.is_inter_community().to_string()),
                ],
            );
        }
        let rec = &mut self.requests[id.index()];
        rec.son = Some(son.id);
        rec.inter_community_son = son.is_inter_community();
        rec.stage = Stage::Converging(host);
        if plan.ambulance.is_none() {
            let hpos = self.hospitals[host.index()].position;
            let patient = &mut self.individuals[rec.patient.index()];
            patient.destination = Some(hpos);
            patient.depart_at = now;
        }
        let (arrive, qt_end) = (plan.patient_arrives_at, plan.qt_end);
        self.converging.insert(id, *plan);
        if arrive <= now {
            self.on_arrival(id, host)?;
        } else {
            self.events.schedule(arrive, Event::PatientArrival { request: id, hospital: host });
        }
        if qt_end <= now {
            self.on_allocation_complete(id)?;
        } else {
            self.events.schedule(qt_end, Event::AllocationComplete { request: id });
        }
        Ok(())
    }

    fn check_death(&mut self, request: RequestId) -> Result<(), EngineError> {
        let now = self.clock;
        let rec = &self.requests[request.index()];
        if rec.outcome != Outcome::Pending || rec.qt_end.is_some() || now < rec.deadline(self.config.threshold_ticks) {
            return Ok(());
        }
        if let Some(son) = rec.son {
            if self.sons.get(son).is_some() {
                self.sons.cut_short(son, now)?;
                self.dismiss(son)?;
            }
        }
        self.converging.remove(&request);
        let rec = &mut self.requests[request.index()];
        rec.outcome = Outcome::Died;
        rec.stage = Stage::Closed;
        self.open.remove(&request);
        let patient = &mut self.individuals[rec.patient.index()];
        patient.state = IndividualState::Dead;
        patient.destination = None;
        let agent = patient.agent;
        self.log.lifecycle(now, "died", agent, &[("request", request.to_string())]);
        Ok(())
    }

    /// Metrics of the run so far; open requests count as censored.
    pub fn metrics(&self) -> Result<RunMetrics, EngineError> {
        let mut acc = MetricsAccumulator::new(self.config.strategy, self.seed, self.config.threshold_ticks, self.config.n_individuals);
        for r in &self.requests {
            acc.record(r, true).map_err(|e| EngineError::Invariant(e.to_string()))?;
        }
        Ok(acc.finish())
    }

    /// Checks the conservation and exclusivity invariants of the current state.
    pub fn check_invariants(&self) -> Result<(), EngineError> {
        let fail = |m: String| Err(EngineError::Invariant(m));
        let mut counted = 0;
        for h in &self.hospitals {
            counted += h.doctors.len() + h.ambulances.len() + h.appliances.len();
            if h.doctors.iter().any(|d| self.doctors[d.index()].home_hospital != h.id)
                || h.ambulances.iter().any(|a| self.ambulances[a.index()].home_hospital != h.id)
                || h.appliances.iter().any(|a| self.appliances[a.index()].home_hospital != h.id)
            {
                return fail(format!("hospital {} lists a foreign resource", h.id));
            }
        }
        let total = self.doctors.len() + self.ambulances.len() + self.appliances.len();
        if counted != total || self.resources.len() != total {
            return fail(format!("resource count drifted: {counted} listed, {total} known"));
        }
        for (agent, req) in &self.holders {
            if !self.holdings.get(req).is_some_and(|s| s.contains(agent)) {
                return fail(format!("holder table out of sync for agent {agent}"));
            }
            let rec = &self.requests[req.index()];
            let is_ambulance = matches!(self.resource_of(*agent), Some(ResourceRef::Ambulance(_)));
            if rec.outcome != Outcome::Pending && !is_ambulance {
                return fail(format!("agent {agent} held by closed request {req}"));
            }
        }
        for (req, set) in &self.holdings {
            let (mut d, mut a, mut p) = (0, 0, 0);
            for agent in set {
                if self.holders.get(agent) != Some(req) {
                    return fail(format!("holdings out of sync for request {req}"));
                }
                match self.resource_of(*agent) {
                    Some(ResourceRef::Doctor(_)) => d += 1,
                    Some(ResourceRef::Ambulance(_)) => a += 1,
                    Some(ResourceRef::Appliance(_)) => p += 1,
                    None => return fail(format!("request {req} holds non-resource {agent}")),
                }
            }
            if d > 1 || a > 1 || p > 1 {
                return fail(format!("request {req} holds {d} doctors, {a} ambulances, {p} appliances"));
            }
        }
        let mut seen = BTreeSet::new();
        for son in self.sons.live() {
            for m in &son.member_agents {
                if !seen.insert(*m) {
                    return fail(format!("agent {m} in two live SONs"));
                }
            }
        }
        if self.config.strategy == StrategyKind::Fso {
            for (agent, r) in &self.resources {
                let community = self.hospitals[self.home_of(*r).index()].community;
                let advertised = self.hierarchy.has_pending(community, *agent, NotificationKind::Availability);
                // Returning resources are announced by their ResourceFreed event.
                let settled = !self.holders.contains_key(agent) && self.busy_until(*r).is_none();
                if advertised != settled {
                    return fail(format!("agent {agent} advertised={advertised} but free={settled}"));
                }
            }
        }
        let mut pending = 0;
        for rec in &self.requests {
            if rec.outcome == Outcome::Pending {
                pending += 1;
                let st = &self.individuals[rec.patient.index()].state;
                if !matches!(st, IndividualState::Sick(r) | IndividualState::InTreatment(r) if *r == rec.id) {
                    return fail(format!("open request {} but patient state {st:?}", rec.id));
                }
            }
            if rec.outcome == Outcome::Treated && rec.qt_end.is_none_or(|q| q > rec.deadline(self.config.threshold_ticks)) {
                return fail(format!("request {} treated after its deadline", rec.id));
            }
            if rec.outcome == Outcome::Died && rec.qt_end.is_some() {
                return fail(format!("request {} died after allocation", rec.id));
            }
        }
        if pending != self.open.len() {
            return fail(format!("{pending} pending requests but {} open", self.open.len()));
        }
        Ok(())
    }
}

fn hospital_letter(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        i.to_string()
    }
}
