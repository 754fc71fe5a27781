//! Request handling under the three organisations.
//!
//! Handlers are planners: given the world, one open request and (for the
//! traditional organisation) the strategy-choice stream, they return the
//! steps the engine must apply this tick. They never mutate the world.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AmbulanceId, ApplianceId, Disease, DoctorId, HospitalId, IndividualId, RequestId};
use crate::engine::{ResourceRef, World};
use crate::geometry::travel_time;
use crate::protocol::{
    ActionId, ActionTemplate, CommunityId, Escalation, EscalationTrace, ResolvedAction, Role, SonId,
};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    Traditional,
    PerfectOracle,
    Fso,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Traditional, StrategyKind::PerfectOracle, StrategyKind::Fso];

    pub fn short_name(self) -> &'static str {
        match self {
            StrategyKind::Traditional => "TO",
            StrategyKind::PerfectOracle => "PO",
            StrategyKind::Fso => "FSO",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy `{0}` (expected TO, PO or FSO)")]
pub struct UnknownStrategy(pub String);

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "to" | "traditional" => Ok(StrategyKind::Traditional),
            "po" | "perfect-oracle" | "perfectoracle" | "oracle" => Ok(StrategyKind::PerfectOracle),
            "fso" => Ok(StrategyKind::Fso),
            _ => Err(UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pending,
    Treated,
    Died,
}

/// Where an open request stands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    New,
    /// The hospital is asked to take the patient in (dispatch or walk-in).
    Consulting(HospitalId),
    Travelling(HospitalId),
    AtHospital(HospitalId),
    /// No hospital can ever treat the patient.
    Stranded,
    /// Network resolution in progress, retried every tick.
    Escalating,
    /// Resources reserved; waiting for them and the patient to converge.
    Converging(HospitalId),
    InTreatment(HospitalId),
    Closed,
}

/// One patient's care request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: RequestId,
    pub patient: IndividualId,
    pub disease: Disease,
    pub issued_at: Tick,
    pub treatment_ticks: Tick,
    pub qt_end: Option<Tick>,
    pub tt_end: Option<Tick>,
    pub outcome: Outcome,
    /// Hospital redirects under the traditional organisation.
    pub failures: u32,
    /// Hospital redirects under the perfect oracle.
    pub redirects: u32,
    pub visited: Vec<HospitalId>,
    pub catalog: Vec<HospitalId>,
    pub escalation: Option<EscalationTrace>,
    pub inter_community_son: bool,
    pub son: Option<SonId>,
    pub treating_hospital: Option<HospitalId>,
    pub stage: Stage,
}

impl RequestRecord {
    pub fn new(id: RequestId, patient: IndividualId, disease: Disease, issued_at: Tick, treatment_ticks: Tick) -> Self {
        Self {
            id,
            patient,
            disease,
            issued_at,
            treatment_ticks,
            qt_end: None,
            tt_end: None,
            outcome: Outcome::Pending,
            failures: 0,
            redirects: 0,
            visited: Vec::new(),
            catalog: Vec::new(),
            escalation: None,
            inter_community_son: false,
            son: None,
            treating_hospital: None,
            stage: Stage::New,
        }
    }

    pub fn qt(&self) -> Option<Tick> {
        self.qt_end.map(|e| e - self.issued_at)
    }

    pub fn deadline(&self, threshold: Tick) -> Tick {
        self.issued_at + threshold
    }
}

/// Roles a disease calls for; the patient slot is filled by the requester.
pub fn required_roles(disease: Disease) -> Vec<Role> {
    let d = disease.id();
    if disease.is_minor() {
        vec![Role::MinorDoctor, Role::Patient(d)]
    } else {
        vec![Role::ExpertDoctor(d), Role::Appliance(d), Role::Ambulance, Role::Patient(d)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceCheck {
    pub has_expert_doctor: bool,
    pub has_free_ambulance: bool,
    pub has_appliance: bool,
    /// Required roles with no free resource right now.
    pub missing: BTreeSet<Role>,
    /// Required roles with no resource on staff at all.
    pub absent: BTreeSet<Role>,
}

/// Which required roles a hospital could fill right now. For minor diseases
/// any doctor will do and appliances and ambulances are not required.
pub fn check_hospital_resources(world: &World, hospital: HospitalId, disease: Disease, now: Tick) -> ResourceCheck {
    let h = &world.hospitals[hospital.index()];
    let doctors = h.doctors.iter().map(|d| &world.doctors[d.index()]).filter(|d| d.treats(disease));
    let mut staffed_doctor = false;
    let mut free_doctor = false;
    for d in doctors {
        staffed_doctor = true;
        free_doctor |= world.is_available(d.agent, now);
    }
    let doctor_role = if disease.is_minor() { Role::MinorDoctor } else { Role::ExpertDoctor(disease.id()) };
    let mut missing = BTreeSet::new();
    let mut absent = BTreeSet::new();
    if !free_doctor {
        missing.insert(doctor_role);
    }
    if !staffed_doctor {
        absent.insert(doctor_role);
    }
    let (mut has_appliance, mut has_free_ambulance) = (true, true);
    if disease.is_severe() {
        let mut staffed = false;
        has_appliance = false;
        for a in h.appliances.iter().map(|a| &world.appliances[a.index()]) {
            if a.disease_type == disease.id() {
                staffed = true;
                has_appliance |= world.is_available(a.agent, now);
            }
        }
        if !has_appliance {
            missing.insert(Role::Appliance(disease.id()));
        }
        if !staffed {
            absent.insert(Role::Appliance(disease.id()));
        }
        has_free_ambulance = h.ambulances.iter().any(|a| world.is_available(world.ambulances[a.index()].agent, now));
        if !has_free_ambulance {
            missing.insert(Role::Ambulance);
        }
        if h.ambulances.is_empty() {
            absent.insert(Role::Ambulance);
        }
    }
    ResourceCheck { has_expert_doctor: free_doctor, has_free_ambulance, has_appliance, missing, absent }
}

/// Everything reserved by a network resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub host: HospitalId,
    pub doctor: (DoctorId, HospitalId, Tick),
    pub appliance: Option<(ApplianceId, HospitalId, Tick)>,
    /// `(ambulance, home, patient delivered at, back home at)`.
    pub ambulance: Option<(AmbulanceId, HospitalId, Tick, Tick)>,
    pub patient_arrives_at: Tick,
    pub qt_end: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Blocked; looked at again next tick.
    Wait,
    Stranded,
    SetCatalog(Vec<HospitalId>),
    Consult(HospitalId),
    /// Forwarded elsewhere; the new hospital is consulted next tick.
    Redirect { to: HospitalId, failure: bool },
    Walk { hospital: HospitalId, arrives_at: Tick },
    Dispatch { ambulance: AmbulanceId, hospital: HospitalId, arrives_at: Tick },
    /// Patient is already at the hospital.
    Arrived(HospitalId),
    Treat { hospital: HospitalId, doctor: DoctorId, appliance: Option<ApplianceId> },
    /// Network escalation attempt; resolved when `plan` is present.
    Escalated { host: HospitalId, escalation: Escalation, plan: Option<Box<Convergence>> },
}

pub fn handle_request<R: Rng + ?Sized>(world: &World, request: RequestId, rng: &mut R) -> Vec<Step> {
    match world.config.strategy {
        StrategyKind::Traditional => handle_request_to(world, request, rng),
        StrategyKind::PerfectOracle => handle_request_po(world, request),
        StrategyKind::Fso => handle_request_fso(world, request),
    }
}

fn lowest_free_doctor(world: &World, h: HospitalId, disease: Disease, now: Tick) -> Option<DoctorId> {
    world.hospitals[h.index()]
        .doctors
        .iter()
        .copied()
        .filter(|d| {
            let doc = &world.doctors[d.index()];
            doc.treats(disease) && world.is_available(doc.agent, now)
        })
        .min()
}

fn lowest_free_appliance(world: &World, h: HospitalId, disease: Disease, now: Tick) -> Option<ApplianceId> {
    world.hospitals[h.index()]
        .appliances
        .iter()
        .copied()
        .filter(|a| {
            let ap = &world.appliances[a.index()];
            ap.disease_type == disease.id() && world.is_available(ap.agent, now)
        })
        .min()
}

fn lowest_free_ambulance(world: &World, h: HospitalId, now: Tick) -> Option<AmbulanceId> {
    world.hospitals[h.index()]
        .ambulances
        .iter()
        .copied()
        .filter(|a| world.is_available(world.ambulances[a.index()].agent, now))
        .min()
}

fn ticks(from: &crate::Position, to: &crate::Position, speed: f64) -> Tick {
    travel_time(from, to, speed).expect("speeds validated at build time")
}

/// Ask hospital `h` to take the patient in: walk-in for minor diseases,
/// ambulance pickup for severe ones. `None` when no ambulance is free.
fn consult(world: &World, rec: &RequestRecord, h: HospitalId, now: Tick) -> Option<Vec<Step>> {
    let patient = &world.individuals[rec.patient.index()];
    let hospital = &world.hospitals[h.index()];
    if patient.position == hospital.position {
        return Some(vec![Step::Arrived(h)]);
    }
    if rec.disease.is_minor() {
        let arrives_at = now + ticks(&patient.position, &hospital.position, patient.speed);
        return Some(vec![Step::Walk { hospital: h, arrives_at }]);
    }
    let amb = lowest_free_ambulance(world, h, now)?;
    let speed = world.config.ambulance_speed;
    let start = world.ambulances[amb.index()].position;
    let arrives_at = now + ticks(&start, &patient.position, speed) + ticks(&patient.position, &hospital.position, speed);
    Some(vec![Step::Dispatch { ambulance: amb, hospital: h, arrives_at }])
}

fn random_other<R: Rng + ?Sized>(n: usize, current: HospitalId, rng: &mut R) -> Option<HospitalId> {
    if n < 2 {
        return None;
    }
    let mut i = rng.gen_range(0..n - 1);
    if i >= current.index() {
        i += 1;
    }
    Some(HospitalId(i as u32))
}

/// Traditional organisation: random hospitals, no knowledge, no sharing.
pub fn handle_request_to<R: Rng + ?Sized>(world: &World, request: RequestId, rng: &mut R) -> Vec<Step> {
    let rec = &world.requests[request.index()];
    let now = world.clock;
    let n = world.hospitals.len();
    let mut steps = Vec::new();
    let stage = match rec.stage {
        Stage::New => {
            let h = HospitalId(rng.gen_range(0..n) as u32);
            steps.push(Step::Consult(h));
            Stage::Consulting(h)
        }
        s => s,
    };
    let redirect = |steps: &mut Vec<Step>, from: HospitalId, rng: &mut R| match random_other(n, from, rng) {
        Some(to) => steps.push(Step::Redirect { to, failure: true }),
        None => steps.push(Step::Wait),
    };
    let at_hospital = |steps: &mut Vec<Step>, h: HospitalId, rng: &mut R| {
        let check = check_hospital_resources(world, h, rec.disease, now);
        let blocking_absence = check.absent.iter().any(|r| *r != Role::Ambulance);
        if blocking_absence {
            redirect(steps, h, rng);
        } else {
            match (lowest_free_doctor(world, h, rec.disease, now), rec.disease.is_severe()) {
                (Some(doctor), false) => steps.push(Step::Treat { hospital: h, doctor, appliance: None }),
                (Some(doctor), true) => match lowest_free_appliance(world, h, rec.disease, now) {
                    Some(a) => steps.push(Step::Treat { hospital: h, doctor, appliance: Some(a) }),
                    None => steps.push(Step::Wait),
                },
                (None, _) => steps.push(Step::Wait),
            }
        }
    };
    match stage {
        Stage::Consulting(h) => match consult(world, rec, h, now) {
            Some(s) => {
                let arrived = matches!(s[..], [Step::Arrived(_)]);
                steps.extend(s);
                if arrived {
                    at_hospital(&mut steps, h, rng);
                }
            }
            None => redirect(&mut steps, h, rng),
        },
        Stage::AtHospital(h) => at_hospital(&mut steps, h, rng),
        _ => steps.push(Step::Wait),
    }
    steps
}

/// Hospitals whose static catalogue covers `disease`, nearest first.
pub fn po_catalog(world: &World, rec: &RequestRecord) -> Vec<HospitalId> {
    let pos = world.individuals[rec.patient.index()].position;
    let mut out: Vec<(Tick, HospitalId)> = world
        .hospitals
        .iter()
        .filter(|h| h.doctors.iter().any(|d| world.doctors[d.index()].treats(rec.disease)))
        .map(|h| (ticks(&pos, &h.position, world.config.ambulance_speed), h.id))
        .collect();
    out.sort();
    out.into_iter().map(|(_, h)| h).collect()
}

fn next_in_catalog(catalog: &[HospitalId], current: HospitalId) -> HospitalId {
    match catalog.iter().position(|h| *h == current) {
        Some(i) => catalog[(i + 1) % catalog.len()],
        None => catalog[0],
    }
}

/// Perfect oracle: nearest hospital with the right doctor on staff;
/// dynamic availability of appliances and ambulances is discovered on the spot.
pub fn handle_request_po(world: &World, request: RequestId) -> Vec<Step> {
    let rec = &world.requests[request.index()];
    let now = world.clock;
    let mut steps = Vec::new();
    let (stage, catalog) = match rec.stage {
        Stage::New => {
            let catalog = po_catalog(world, rec);
            if catalog.is_empty() {
                return vec![Step::Stranded];
            }
            steps.push(Step::SetCatalog(catalog.clone()));
            steps.push(Step::Consult(catalog[0]));
            (Stage::Consulting(catalog[0]), catalog)
        }
        s => (s, rec.catalog.clone()),
    };
    let move_on = |steps: &mut Vec<Step>, h: HospitalId| {
        let next = next_in_catalog(&catalog, h);
        if next == h {
            steps.push(Step::Wait);
        } else {
            steps.push(Step::Redirect { to: next, failure: false });
        }
    };
    let at_hospital = |steps: &mut Vec<Step>, h: HospitalId| match lowest_free_doctor(world, h, rec.disease, now) {
        None => steps.push(Step::Wait),
        Some(doctor) if rec.disease.is_minor() => steps.push(Step::Treat { hospital: h, doctor, appliance: None }),
        Some(doctor) => match lowest_free_appliance(world, h, rec.disease, now) {
            Some(a) => steps.push(Step::Treat { hospital: h, doctor, appliance: Some(a) }),
            None => move_on(steps, h),
        },
    };
    match stage {
        Stage::Consulting(h) => match consult(world, rec, h, now) {
            Some(s) => {
                let arrived = matches!(s[..], [Step::Arrived(_)]);
                steps.extend(s);
                if arrived {
                    at_hospital(&mut steps, h);
                }
            }
            None => move_on(&mut steps, h),
        },
        Stage::AtHospital(h) => at_hospital(&mut steps, h),
        _ => steps.push(Step::Wait),
    }
    steps
}

/// Nearest hospital to a position, lowest id on ties.
pub fn nearest_hospital(world: &World, pos: &crate::Position) -> HospitalId {
    world
        .hospitals
        .iter()
        .map(|h| (ticks(pos, &h.position, world.config.ambulance_speed), h.position.distance(pos), h.id))
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
        .map(|(_, _, id)| id)
        .expect("at least one hospital")
}

/// Donor preference relative to the treating hospital: the host first, then
/// other hospitals by increasing transfer time, lowest id on ties.
pub fn donor_priority(world: &World, host: HospitalId) -> Vec<(CommunityId, u64)> {
    let hp = world.hospitals[host.index()].position;
    let mut others: Vec<(Tick, HospitalId)> = world
        .hospitals
        .iter()
        .filter(|h| h.id != host)
        .map(|h| (ticks(&hp, &h.position, world.config.ambulance_speed), h.id))
        .collect();
    others.sort();
    std::iter::once((world.hospitals[host.index()].community, 0))
        .chain(others.into_iter().enumerate().map(|(i, (_, h))| (world.hospitals[h.index()].community, i as u64 + 1)))
        .collect()
}

pub fn service_template(world: &World, rec: &RequestRecord, host: HospitalId) -> ActionTemplate {
    let patient = &world.individuals[rec.patient.index()];
    ActionTemplate::new(ActionId(rec.id.0), required_roles(rec.disease), true)
        .with_host(world.hospitals[host.index()].community)
        .prefill(Role::Patient(rec.disease.id()), patient.agent)
}

/// FSO: the request travels up the community tree; missing roles are
/// borrowed from other hospitals through a SON.
pub fn handle_request_fso(world: &World, request: RequestId) -> Vec<Step> {
    let rec = &world.requests[request.index()];
    if !matches!(rec.stage, Stage::New | Stage::Escalating) {
        return vec![Step::Wait];
    }
    let now = world.clock;
    let patient = &world.individuals[rec.patient.index()];
    let host = rec.treating_hospital.unwrap_or_else(|| nearest_hospital(world, &patient.position));
    let priorities = donor_priority(world, host);
    let priority = |c: CommunityId| priorities.iter().find(|(x, _)| *x == c).map_or(u64::MAX, |(_, p)| *p);
    let template = service_template(world, rec, host);
    let escalation = world
        .hierarchy
        .route_request(
            patient.home_isoc,
            world.hospitals[host.index()].community,
            &template,
            world.config.flooding_threshold,
            &priority,
        )
        .expect("scenario hierarchy is well formed");
    let plan = escalation.resolved.as_ref().map(|r| Box::new(converge(world, rec, host, r, now)));
    vec![Step::Escalated { host, escalation, plan }]
}

fn converge(world: &World, rec: &RequestRecord, host: HospitalId, resolved: &ResolvedAction, now: Tick) -> Convergence {
    let speed = world.config.ambulance_speed;
    let hpos = world.hospitals[host.index()].position;
    let patient = &world.individuals[rec.patient.index()];
    let transfer = |from: HospitalId| now + ticks(&world.hospitals[from.index()].position, &hpos, speed);
    let mut doctor = None;
    let mut appliance = None;
    let mut ambulance = None;
    for fill in resolved.template.filled.iter().flatten() {
        match world.resource_of(fill.agent) {
            Some(ResourceRef::Doctor(d)) => {
                let home = world.doctors[d.index()].home_hospital;
                doctor = Some((d, home, transfer(home)));
            }
            Some(ResourceRef::Appliance(a)) => {
                let home = world.appliances[a.index()].home_hospital;
                appliance = Some((a, home, transfer(home)));
            }
            Some(ResourceRef::Ambulance(a)) => {
                let amb = &world.ambulances[a.index()];
                let home = amb.home_hospital;
                let delivered = now + ticks(&amb.position, &patient.position, speed) + ticks(&patient.position, &hpos, speed);
                let back = delivered + ticks(&hpos, &world.hospitals[home.index()].position, speed);
                ambulance = Some((a, home, delivered, back));
            }
            None => {}
        }
    }
    let patient_arrives_at = match ambulance {
        Some((_, _, delivered, _)) => delivered,
        None => now + ticks(&patient.position, &hpos, patient.speed),
    };
    let doctor = doctor.expect("every service template has a doctor slot");
    let qt_end = [Some(patient_arrives_at), Some(doctor.2), appliance.map(|a| a.2)].into_iter().flatten().max().unwrap_or(now);
    Convergence { host, doctor, appliance, ambulance, patient_arrives_at, qt_end }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roles_by_severity() {
        let d2 = Disease::new(2).unwrap();
        assert_eq!(required_roles(d2), vec![Role::MinorDoctor, Role::Patient(2)]);
        let d7 = Disease::new(7).unwrap();
        assert_eq!(required_roles(d7), vec![Role::ExpertDoctor(7), Role::Appliance(7), Role::Ambulance, Role::Patient(7)]);
        let d4 = required_roles(Disease::new(4).unwrap());
        let d10 = required_roles(Disease::new(10).unwrap());
        assert_eq!(d4.len(), d10.len());
        assert_ne!(d4, d10);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in StrategyKind::ALL {
            assert_eq!(s.short_name().parse::<StrategyKind>(), Ok(s));
        }
        assert!("xyz".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn catalog_cycles() {
        let c = [HospitalId(2), HospitalId(0), HospitalId(1)];
        assert_eq!(next_in_catalog(&c, HospitalId(2)), HospitalId(0));
        assert_eq!(next_in_catalog(&c, HospitalId(1)), HospitalId(2));
        assert_eq!(next_in_catalog(&[HospitalId(3)], HospitalId(3)), HospitalId(3));
    }

    #[test]
    fn random_other_never_returns_current() {
        let mut rng = crate::rng::substream(5, crate::rng::StreamTag::StrategyChoice);
        for cur in 0..4 {
            for _ in 0..200 {
                let o = random_other(4, HospitalId(cur), &mut rng).unwrap();
                assert_ne!(o, HospitalId(cur));
                assert!(o.0 < 4);
            }
        }
        assert_eq!(random_other(1, HospitalId(0), &mut rng), None);
    }
}
