#![allow(dead_code)]

use fso_core::engine::{HospitalSpec, WorldLayout};
use fso_core::{Position, StrategyKind, WorldConfig};

pub fn quiet(strategy: StrategyKind, threshold: u64) -> WorldConfig {
    WorldConfig { strategy, threshold_ticks: threshold, sickness_probability: 0.0, ..WorldConfig::default() }
}

pub fn hospital(x: f64, y: f64, doctors: &[[u8; 3]], ambulances: usize, appliances: &[u8]) -> HospitalSpec {
    HospitalSpec { position: Position::new(x, y), doctors: doctors.to_vec(), ambulances, appliances: appliances.to_vec() }
}

pub fn layout(hospitals: Vec<HospitalSpec>, individuals: &[(f64, f64)]) -> WorldLayout {
    WorldLayout { hospitals, individuals: individuals.iter().map(|(x, y)| Position::new(*x, *y)).collect() }
}
