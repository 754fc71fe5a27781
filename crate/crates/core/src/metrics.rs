//! Per-run counters and cross-seed aggregation.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RequestId;
use crate::strategies::{Outcome, RequestRecord, StrategyKind};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("request {0} recorded twice")]
    DoubleRecord(RequestId),
    #[error("request {0} is still pending and the run has not ended")]
    NotFinal(RequestId),
    #[error("nothing to aggregate")]
    EmptyGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub threshold_ticks: Tick,
    pub n_individuals: usize,
    pub requests_total: u64,
    pub treated: u64,
    pub deaths: u64,
    pub censored: u64,
    /// Mean querying time over treated requests; `None` when nobody was treated.
    pub avg_qt_ticks: Option<f64>,
    pub sons_inter: u64,
    pub sons_infra: u64,
    pub to_failures: u64,
}

#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    strategy: StrategyKind,
    seed: u64,
    threshold_ticks: Tick,
    n_individuals: usize,
    seen: BTreeSet<RequestId>,
    treated: u64,
    deaths: u64,
    censored: u64,
    qt_sum: u64,
    sons_inter: u64,
    sons_infra: u64,
    to_failures: u64,
}

impl MetricsAccumulator {
    pub fn new(strategy: StrategyKind, seed: u64, threshold_ticks: Tick, n_individuals: usize) -> Self {
        Self {
            strategy,
            seed,
            threshold_ticks,
            n_individuals,
            seen: BTreeSet::new(),
            treated: 0,
            deaths: 0,
            censored: 0,
            qt_sum: 0,
            sons_inter: 0,
            sons_infra: 0,
            to_failures: 0,
        }
    }

    /// Adds one request. Pending requests are only accepted once the run has
    /// ended, and then count as censored.
    pub fn record(&mut self, rec: &RequestRecord, run_ended: bool) -> Result<(), MetricsError> {
        if rec.outcome == Outcome::Pending && !run_ended {
            return Err(MetricsError::NotFinal(rec.id));
        }
        if !self.seen.insert(rec.id) {
            return Err(MetricsError::DoubleRecord(rec.id));
        }
        match rec.outcome {
            Outcome::Treated => {
                self.treated += 1;
                self.qt_sum += rec.qt().unwrap_or(0);
            }
            Outcome::Died => self.deaths += 1,
            Outcome::Pending => self.censored += 1,
        }
        if rec.son.is_some() {
            if rec.inter_community_son {
                self.sons_inter += 1;
            } else {
                self.sons_infra += 1;
            }
        }
        self.to_failures += u64::from(rec.failures);
        Ok(())
    }

    pub fn finish(&self) -> RunMetrics {
        RunMetrics {
            strategy: self.strategy,
            seed: self.seed,
            threshold_ticks: self.threshold_ticks,
            n_individuals: self.n_individuals,
            requests_total: self.seen.len() as u64,
            treated: self.treated,
            deaths: self.deaths,
            censored: self.censored,
            avg_qt_ticks: (self.treated > 0).then(|| self.qt_sum as f64 / self.treated as f64),
            sons_inter: self.sons_inter,
            sons_infra: self.sons_infra,
            to_failures: self.to_failures,
        }
    }
}

pub fn mean<S: Float>(xs: &[S]) -> Option<S> {
    if xs.is_empty() {
        return None;
    }
    let n = S::from(xs.len())?;
    Some(xs.iter().fold(S::zero(), |a, x| a + *x) / n)
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub fn sample_stddev<S: Float>(xs: &[S]) -> Option<S> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(S::zero());
    }
    let ss = xs.iter().fold(S::zero(), |a, x| a + (*x - m) * (*x - m));
    Some((ss / S::from(xs.len() - 1)?).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    /// Order-independent: values are sorted before summation.
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self { mean: mean(&v)?, stddev: sample_stddev(&v)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: StrategyKind,
    pub threshold_ticks: Tick,
    pub n_individuals: usize,
    pub runs: usize,
    pub deaths: Stat,
    /// Over the runs that treated anybody; `None` if none did.
    pub avg_qt: Option<Stat>,
    pub sons_inter: Stat,
    pub to_failures: Stat,
}

/// Groups runs by `(strategy, threshold, population)`, in key order.
pub fn aggregate(runs: &[RunMetrics]) -> Result<Vec<SummaryRow>, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut groups: BTreeMap<(StrategyKind, Tick, usize), Vec<&RunMetrics>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.strategy, r.threshold_ticks, r.n_individuals)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((strategy, threshold_ticks, n_individuals), rs)| {
            let col = |f: &dyn Fn(&RunMetrics) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let qts: Vec<f64> = rs.iter().filter_map(|r| r.avg_qt_ticks).collect();
            Ok(SummaryRow {
                strategy,
                threshold_ticks,
                n_individuals,
                runs: rs.len(),
                deaths: Stat::of(&col(&|r| r.deaths as f64)).ok_or(MetricsError::EmptyGroup)?,
                avg_qt: Stat::of(&qts),
                sons_inter: Stat::of(&col(&|r| r.sons_inter as f64)).ok_or(MetricsError::EmptyGroup)?,
                to_failures: Stat::of(&col(&|r| r.to_failures as f64)).ok_or(MetricsError::EmptyGroup)?,
            })
        })
        .collect()
}
