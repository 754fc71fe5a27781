//! Agent-based simulator of a fractal social organization coordinating
//! healthcare resources.
//!
//! A [`World`] holds hospitals, their doctors, ambulances and appliances,
//! and a population of individuals going about their activities. Sick
//! individuals issue care requests that are handled by one of three
//! organisations ([`StrategyKind`]). Runs are pure functions of their
//! configuration and seed.

pub mod domain;
pub mod engine;
pub mod geometry;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod strategies;

/// Simulation time step.
pub type Tick = u64;
/// Grid position in cells.
pub type Position = geometry::Point<f64>;
pub type Bounds = geometry::Bounds<f64>;

pub use engine::{build_world, build_world_with_layout, run, ConfigError, EngineError, World, WorldConfig, WorldLayout};
pub use metrics::{aggregate, RunMetrics, SummaryRow};
pub use strategies::StrategyKind;
