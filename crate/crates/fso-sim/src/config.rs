//! Experiment-grid configuration files.
//!
//! A config is a TOML document with two optional tables:
//!
//! ```toml
//! [grid]
//! strategies = ["to", "po", "fso"]
//! thresholds = [150, 200, 250]
//! populations = [60, 80, 100, 120, 140]
//! repetitions = 5
//! master_seed = 1
//!
//! [world]
//! sickness_probability = 0.09
//! ```
//!
//! Every key is optional; scalars are accepted where a list is expected.

use std::path::{Path, PathBuf};

use fso_core::{StrategyKind, Tick, WorldConfig};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("{}`{key}` {reason}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Range { line: Option<usize>, key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub strategies: Vec<StrategyKind>,
    pub thresholds: Vec<Tick>,
    pub populations: Vec<usize>,
    pub repetitions: u64,
    pub master_seed: u64,
    /// Base world; strategy, threshold and population are set per cell.
    pub world: WorldConfig,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            strategies: StrategyKind::ALL.to_vec(),
            thresholds: vec![150, 200, 250],
            populations: vec![60, 80, 100, 120, 140],
            repetitions: 5,
            master_seed: 1,
            world: WorldConfig::default(),
        }
    }
}

/// One run of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub strategy: StrategyKind,
    pub threshold: Tick,
    pub population: usize,
    pub seed: u64,
}

impl ExperimentGrid {
    pub fn size(&self) -> usize {
        self.strategies.len() * self.thresholds.len() * self.populations.len() * self.repetitions as usize
    }

    /// All cells in output order. Seeds are `master_seed + repetition`, so
    /// every strategy sees the same worlds.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::with_capacity(self.size());
        for &strategy in &self.strategies {
            for &threshold in &self.thresholds {
                for &population in &self.populations {
                    for rep in 0..self.repetitions {
                        cells.push(Cell { strategy, threshold, population, seed: self.master_seed.wrapping_add(rep) });
                    }
                }
            }
        }
        cells.sort();
        cells.dedup();
        cells
    }

    pub fn world_for(&self, cell: &Cell) -> WorldConfig {
        WorldConfig {
            strategy: cell.strategy,
            threshold_ticks: cell.threshold,
            n_individuals: cell.population,
            ..self.world.clone()
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    world: RawWorld,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    strategies: Option<OneOrMany<String>>,
    thresholds: Option<OneOrMany<i64>>,
    populations: Option<OneOrMany<i64>>,
    repetitions: Option<i64>,
    master_seed: Option<u64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    width: Option<f64>,
    height: Option<f64>,
    n_hospitals: Option<usize>,
    n_doctors: Option<usize>,
    n_ambulances: Option<usize>,
    n_appliances: Option<usize>,
    n_residents_communities: Option<usize>,
    sickness_probability: Option<f64>,
    total_ticks: Option<Tick>,
    flooding_threshold: Option<usize>,
    individual_speed: Option<f64>,
    ambulance_speed: Option<f64>,
    activity_ticks: Option<(Tick, Tick)>,
    treatment_ticks: Option<(Tick, Tick)>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentGrid, ConfigFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: path.to_owned(), source })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentGrid, ConfigFileError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| line_of(text, s.start));
        let message = e.message().to_owned();
        match unknown_field(&message) {
            Some(key) => ConfigFileError::UnknownKey { line, key },
            None => ConfigFileError::Parse { line, message },
        }
    })?;
    let range = |key: &str, reason: String| ConfigFileError::Range { line: key_line(text, key), key: key.to_owned(), reason };

    let mut grid = ExperimentGrid::default();
    let g = raw.grid;
    if let Some(s) = g.strategies {
        grid.strategies = s
            .into_vec()
            .iter()
            .map(|name| name.parse::<StrategyKind>().map_err(|e| range("strategies", e.to_string())))
            .collect::<Result<_, _>>()?;
    }
    if let Some(t) = g.thresholds {
        grid.thresholds = t
            .into_vec()
            .into_iter()
            .map(|v| Tick::try_from(v).map_err(|_| range("thresholds", format!("must be non-negative, got {v}"))))
            .collect::<Result<_, _>>()?;
    }
    if let Some(p) = g.populations {
        grid.populations = p
            .into_vec()
            .into_iter()
            .map(|v| usize::try_from(v).map_err(|_| range("populations", format!("must be non-negative, got {v}"))))
            .collect::<Result<_, _>>()?;
    }
    if let Some(r) = g.repetitions {
        grid.repetitions = u64::try_from(r)
            .ok()
            .filter(|r| *r >= 1)
            .ok_or_else(|| range("repetitions", format!("must be at least 1, got {r}")))?;
    }
    if let Some(s) = g.master_seed {
        grid.master_seed = s;
    }
    for (key, empty) in [
        ("strategies", grid.strategies.is_empty()),
        ("thresholds", grid.thresholds.is_empty()),
        ("populations", grid.populations.is_empty()),
    ] {
        if empty {
            return Err(range(key, "must not be empty".into()));
        }
    }

    let w = raw.world;
    let c = &mut grid.world;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = w.$f { c.$f = v; })* };
    }
    set!(
        width,
        height,
        n_hospitals,
        n_doctors,
        n_ambulances,
        n_appliances,
        n_residents_communities,
        sickness_probability,
        total_ticks,
        flooding_threshold,
        individual_speed,
        ambulance_speed,
        activity_ticks,
        treatment_ticks
    );
    c.validate().map_err(|e| range(&e.key, e.reason))?;
    Ok(grid)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key = ...` assignment, if any.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| l.split('=').next().is_some_and(|k| k.trim() == key)).map(|i| i + 1)
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_owned())
}
