use fso_core::{aggregate, build_world, EngineError, RunMetrics, SummaryRow};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Cell, ExperimentGrid};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("parallelism must be at least 1")]
    Parallelism,
    #[error("run {strategy} threshold={threshold} population={population} seed={seed}: {source}", strategy = cell.strategy, threshold = cell.threshold, population = cell.population, seed = cell.seed)]
    Run {
        cell: Cell,
        #[source]
        source: EngineError,
    },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error(transparent)]
    Metrics(#[from] fso_core::metrics::MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutput {
    /// One entry per cell, in cell order.
    pub runs: Vec<RunMetrics>,
    pub summary: Vec<SummaryRow>,
    /// Event log lines of every run, in cell order; empty unless requested.
    pub log: Vec<String>,
}

/// Runs every cell on a pool of `parallelism` workers. Results are merged in
/// cell order, so the output does not depend on scheduling.
pub fn run_grid(grid: &ExperimentGrid, parallelism: usize, with_log: bool) -> Result<GridOutput, GridError> {
    if parallelism == 0 {
        return Err(GridError::Parallelism);
    }
    let cells = grid.cells();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallelism).build()?;
    let results: Vec<Result<(RunMetrics, Vec<String>), GridError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let config = fso_core::WorldConfig { log_events: with_log, ..grid.world_for(cell) };
                let wrap = |source| GridError::Run { cell: *cell, source };
                let mut world = build_world(&config, cell.seed).map_err(wrap)?;
                world.run_to_end().map_err(wrap)?;
                let metrics = world.metrics().map_err(wrap)?;
                let mut log = Vec::new();
                if with_log {
                    log.push(format!(
                        "# run strategy={} threshold={} population={} seed={}",
                        cell.strategy.short_name(),
                        cell.threshold,
                        cell.population,
                        cell.seed
                    ));
                    log.extend(world.log.take());
                }
                Ok((metrics, log))
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    let mut log = Vec::new();
    for r in results {
        let (m, l) = r?;
        runs.push(m);
        log.extend(l);
    }
    let summary = aggregate(&runs)?;
    Ok(GridOutput { runs, summary, log })
}
