//! Agents, diseases and hospital resources.

use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::activity::Activity;
use crate::protocol::CommunityId;
use crate::{Position, Tick};

macro_rules! id_newtype {
    ($($(#[$m:meta])* $name:ident),* $(,)?) => {
        $(
            $(#[$m])*
            #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
            pub struct $name(pub u32);

            impl $name {
                pub fn index(self) -> usize {
                    self.0 as usize
                }
            }

            impl fmt::Display for $name {
                fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                    write!(f, "{}", self.0)
                }
            }
        )*
    };
}

id_newtype!(
    /// Global agent identifier, shared by every kind of agent and by community coordinators.
    AgentId,
    HospitalId,
    DoctorId,
    AmbulanceId,
    ApplianceId,
    IndividualId,
    RequestId,
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("disease id {0} outside 1..=10")]
    DiseaseOutOfRange(u8),
    #[error("doctor expertise must be three distinct severe diseases, got {0:?}")]
    BadExpertise([u8; 3]),
    #[error("appliance disease type {0} is not severe")]
    MinorAppliance(u8),
    #[error("at least one hospital is required")]
    NoHospitals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    Individual,
    Doctor,
    /// Present for completeness; carries no behaviour.
    Firefighter,
    /// Present for completeness; carries no behaviour.
    TaxiDriver,
    Ambulance,
    Appliance,
}

pub const DISEASE_COUNT: u8 = 10;
pub const SEVERE_DISEASES: std::ops::RangeInclusive<u8> = 4..=10;

/// A disease whose id doubles as its severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Disease(u8);

impl Disease {
    pub fn new(id: u8) -> Result<Self, DomainError> {
        if (1..=DISEASE_COUNT).contains(&id) {
            Ok(Self(id))
        } else {
            Err(DomainError::DiseaseOutOfRange(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn severity(self) -> u8 {
        self.0
    }

    pub fn is_minor(self) -> bool {
        self.0 <= 3
    }

    pub fn is_severe(self) -> bool {
        !self.is_minor()
    }
}

impl fmt::Display for Disease {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Uniform draw over the ten disease ids.
pub fn sample_disease<R: Rng + ?Sized>(rng: &mut R) -> Disease {
    Disease(rng.gen_range(1..=DISEASE_COUNT))
}

fn is_free(busy_until: Option<Tick>, now: Tick) -> bool {
    busy_until.is_none_or(|t| t <= now)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Doctor {
    pub id: DoctorId,
    pub agent: AgentId,
    pub home_hospital: HospitalId,
    /// Sorted, distinct, all severe.
    pub expertise: [u8; 3],
    pub busy_until: Option<Tick>,
}

impl Doctor {
    pub fn treats(&self, disease: Disease) -> bool {
        disease.is_minor() || self.expertise.contains(&disease.id())
    }

    pub fn is_free(&self, now: Tick) -> bool {
        is_free(self.busy_until, now)
    }
}

pub fn validate_expertise(mut e: [u8; 3]) -> Result<[u8; 3], DomainError> {
    e.sort_unstable();
    let distinct = e[0] != e[1] && e[1] != e[2];
    if distinct && e.iter().all(|d| SEVERE_DISEASES.contains(d)) {
        Ok(e)
    } else {
        Err(DomainError::BadExpertise(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ambulance {
    pub id: AmbulanceId,
    pub agent: AgentId,
    pub home_hospital: HospitalId,
    pub position: Position,
    pub busy_until: Option<Tick>,
}

impl Ambulance {
    pub fn is_free(&self, now: Tick) -> bool {
        is_free(self.busy_until, now)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appliance {
    pub id: ApplianceId,
    pub agent: AgentId,
    pub home_hospital: HospitalId,
    pub disease_type: u8,
    pub busy_until: Option<Tick>,
}

impl Appliance {
    pub fn is_free(&self, now: Tick) -> bool {
        is_free(self.busy_until, now)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hospital {
    pub id: HospitalId,
    pub name: String,
    pub position: Position,
    pub community: CommunityId,
    pub doctors: Vec<DoctorId>,
    pub ambulances: Vec<AmbulanceId>,
    pub appliances: Vec<ApplianceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IndividualState {
    Idle,
    InActivity(Activity),
    Sick(RequestId),
    InTreatment(RequestId),
    Dead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: IndividualId,
    pub agent: AgentId,
    pub position: Position,
    pub speed: f64,
    pub state: IndividualState,
    pub home_isoc: CommunityId,
    pub residents: usize,
    /// Where the individual is currently heading, if anywhere.
    pub destination: Option<Position>,
    /// Movement towards `destination` starts at this tick.
    pub depart_at: Tick,
}

impl Individual {
    pub fn is_alive(&self) -> bool {
        !matches!(self.state, IndividualState::Dead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResourceCounts {
    pub doctors: usize,
    pub ambulances: usize,
    pub appliances: usize,
}

/// Seed-determined placement of every resource, shared by all strategies.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResourceAssignment {
    /// `(hospital index, sorted expertise)` per doctor.
    pub doctors: Vec<(usize, [u8; 3])>,
    pub ambulances: Vec<usize>,
    /// `(hospital index, disease type)` per appliance.
    pub appliances: Vec<(usize, u8)>,
}

impl ResourceAssignment {
    pub fn per_hospital_counts(&self, n_hospitals: usize) -> Vec<ResourceCounts> {
        let mut out = vec![ResourceCounts::default(); n_hospitals];
        for (h, _) in &self.doctors {
            out[*h].doctors += 1;
        }
        for h in &self.ambulances {
            out[*h].ambulances += 1;
        }
        for (h, _) in &self.appliances {
            out[*h].appliances += 1;
        }
        out
    }
}

/// Spreads resources over hospitals.
///
/// Hospital indices and appliance types come from `placement`; expertise sets
/// come from `expertise`. Draw order is doctors, then ambulances, then
/// appliances, and is part of the reproducibility contract.
pub fn distribute_resources<R: Rng + ?Sized>(
    placement: &mut R,
    expertise: &mut R,
    counts: ResourceCounts,
    n_hospitals: usize,
) -> Result<ResourceAssignment, DomainError> {
    if n_hospitals == 0 {
        return Err(DomainError::NoHospitals);
    }
    let severe: Vec<u8> = SEVERE_DISEASES.collect();
    let doctors = (0..counts.doctors)
        .map(|_| {
            let h = placement.gen_range(0..n_hospitals);
            let picked = index::sample(expertise, severe.len(), 3);
            let mut e = [0u8; 3];
            for (slot, i) in e.iter_mut().zip(picked.iter()) {
                *slot = severe[i];
            }
            e.sort_unstable();
            (h, e)
        })
        .collect();
    let ambulances = (0..counts.ambulances)
        .map(|_| placement.gen_range(0..n_hospitals))
        .collect();
    let appliances = (0..counts.appliances)
        .map(|_| {
            let h = placement.gen_range(0..n_hospitals);
            (h, placement.gen_range(SEVERE_DISEASES))
        })
        .collect();
    Ok(ResourceAssignment { doctors, ambulances, appliances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamTag};

    #[test]
    fn disease_classes() {
        for id in 1..=3 {
            assert!(Disease::new(id).unwrap().is_minor());
        }
        for id in 4..=10 {
            let d = Disease::new(id).unwrap();
            assert!(d.is_severe());
            assert_eq!(d.severity(), id);
        }
        assert_eq!(Disease::new(0), Err(DomainError::DiseaseOutOfRange(0)));
        assert_eq!(Disease::new(11), Err(DomainError::DiseaseOutOfRange(11)));
    }

    #[test]
    fn expertise_validation() {
        assert_eq!(validate_expertise([9, 4, 6]), Ok([4, 6, 9]));
        assert!(validate_expertise([4, 4, 6]).is_err());
        assert!(validate_expertise([3, 4, 6]).is_err());
    }

    #[test]
    fn sample_disease_range_and_determinism() {
        let mut a = substream(3, StreamTag::Sickness);
        let mut b = substream(3, StreamTag::Sickness);
        for _ in 0..1000 {
            let d = sample_disease(&mut a);
            assert!((1..=10).contains(&d.id()));
            assert_eq!(d, sample_disease(&mut b));
        }
    }

    #[test]
    fn sample_disease_frequencies_within_three_sigma() {
        let mut rng = substream(3, StreamTag::Sickness);
        let n = 10_000_f64;
        let mut counts = [0u32; 10];
        for _ in 0..10_000 {
            counts[(sample_disease(&mut rng).id() - 1) as usize] += 1;
        }
        let sigma = (n * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn empty_counts_give_empty_assignment() {
        let mut p = substream(1, StreamTag::ResourcePlacement);
        let mut e = substream(1, StreamTag::Expertise);
        let a = distribute_resources(&mut p, &mut e, ResourceCounts::default(), 4).unwrap();
        assert_eq!(a, ResourceAssignment::default());
    }

    #[test]
    fn zero_hospitals_rejected() {
        let mut p = substream(1, StreamTag::ResourcePlacement);
        let mut e = substream(1, StreamTag::Expertise);
        let err = distribute_resources(&mut p, &mut e, ResourceCounts::default(), 0);
        assert_eq!(err, Err(DomainError::NoHospitals));
    }

    fn seed42() -> ResourceAssignment {
        let mut p = substream(42, StreamTag::ResourcePlacement);
        let mut e = substream(42, StreamTag::Expertise);
        let counts = ResourceCounts { doctors: 15, ambulances: 8, appliances: 70 };
        distribute_resources(&mut p, &mut e, counts, 4).unwrap()
    }

    #[test]
    fn assignment_conserves_counts() {
        let a = seed42();
        let per = a.per_hospital_counts(4);
        assert_eq!(per.iter().map(|c| c.doctors).sum::<usize>(), 15);
        assert_eq!(per.iter().map(|c| c.ambulances).sum::<usize>(), 8);
        assert_eq!(per.iter().map(|c| c.appliances).sum::<usize>(), 70);
        for (_, e) in &a.doctors {
            assert_eq!(validate_expertise(*e), Ok(*e));
        }
        assert!(a.appliances.iter().all(|(_, d)| SEVERE_DISEASES.contains(d)));
    }

    #[test]
    fn seed42_golden_assignment() {
        let a = seed42();
        let golden = include_str!("../tests/fixtures/seed42_assignment.txt");
        assert_eq!(render_assignment(&a), golden);
    }

    pub(crate) fn render_assignment(a: &ResourceAssignment) -> String {
        let mut s = String::new();
        for (h, e) in &a.doctors {
            s.push_str(&format!("doctor {h} {}-{}-{}\n", e[0], e[1], e[2]));
        }
        for h in &a.ambulances {
            s.push_str(&format!("ambulance {h}\n"));
        }
        for (h, d) in &a.appliances {
            s.push_str(&format!("appliance {h} {d}\n"));
        }
        s
    }
}
