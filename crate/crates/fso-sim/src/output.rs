//! Results, summary and plot-data files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use fso_core::metrics::Stat;
use fso_core::{RunMetrics, StrategyKind, SummaryRow, Tick};
use thiserror::Error;

pub const RESULTS_HEADER: [&str; 13] = [
    "run_id",
    "strategy",
    "seed",
    "threshold_ticks",
    "n_individuals",
    "requests_total",
    "treated",
    "deaths",
    "censored",
    "avg_qt_ticks",
    "sons_inter",
    "sons_infra",
    "to_failures",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "strategy",
    "threshold_ticks",
    "n_individuals",
    "runs",
    "deaths_mean",
    "deaths_sd",
    "avg_qt_mean",
    "avg_qt_sd",
    "sons_inter_mean",
    "sons_inter_sd",
    "to_failures_mean",
    "to_failures_sd",
];

const NA: &str = "NA";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("summary line {line}: {reason}")]
    BadSummary { line: u64, reason: String },
    #[error("no summary rows")]
    Empty,
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_owned(), num)
}

/// `run_id` counts from 1 in row order.
pub fn write_results<W: Write>(out: W, runs: &[RunMetrics]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for (i, r) in runs.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.strategy.short_name().to_owned(),
            r.seed.to_string(),
            r.threshold_ticks.to_string(),
            r.n_individuals.to_string(),
            r.requests_total.to_string(),
            r.treated.to_string(),
            r.deaths.to_string(),
            r.censored.to_string(),
            opt(r.avg_qt_ticks),
            r.sons_inter.to_string(),
            r.sons_infra.to_string(),
            r.to_failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.strategy.short_name().to_owned(),
            r.threshold_ticks.to_string(),
            r.n_individuals.to_string(),
            r.runs.to_string(),
            num(r.deaths.mean),
            num(r.deaths.stddev),
            opt(r.avg_qt.map(|s| s.mean)),
            opt(r.avg_qt.map(|s| s.stddev)),
            num(r.sons_inter.mean),
            num(r.sons_inter.stddev),
            num(r.to_failures.mean),
            num(r.to_failures.stddev),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>, OutputError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(OutputError::BadSummary { line: 1, reason: "unexpected header".into() });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| OutputError::BadSummary { line, reason };
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let parse_f = |i: usize| -> Result<Option<f64>, OutputError> {
            match field(i) {
                NA => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(format!("`{}` is not a number: {s:?}", SUMMARY_HEADER[i]))),
            }
        };
        let stat = |i: usize| -> Result<Option<Stat>, OutputError> {
            Ok(match (parse_f(i)?, parse_f(i + 1)?) {
                (Some(mean), Some(stddev)) => Some(Stat { mean, stddev }),
                _ => None,
            })
        };
        let need = |i: usize| stat(i)?.ok_or_else(|| bad(format!("`{}` is missing", SUMMARY_HEADER[i])));
        rows.push(SummaryRow {
            strategy: field(0).parse::<StrategyKind>().map_err(|e| bad(e.to_string()))?,
            threshold_ticks: field(1).parse().map_err(|_| bad("bad threshold_ticks".into()))?,
            n_individuals: field(2).parse().map_err(|_| bad("bad n_individuals".into()))?,
            runs: field(3).parse().map_err(|_| bad("bad runs".into()))?,
            deaths: need(4)?,
            avg_qt: stat(6)?,
            sons_inter: need(8)?,
            to_failures: need(10)?,
        });
    }
    Ok(rows)
}

/// One table per threshold: population, then for each strategy its mean
/// deaths, QT, inter-community SONs and TO failures. Missing values are `NA`.
pub fn plot_tables(rows: &[SummaryRow]) -> Result<BTreeMap<Tick, String>, OutputError> {
    if rows.is_empty() {
        return Err(OutputError::Empty);
    }
    let mut by_threshold: BTreeMap<Tick, BTreeMap<usize, BTreeMap<StrategyKind, &SummaryRow>>> = BTreeMap::new();
    for r in rows {
        by_threshold.entry(r.threshold_ticks).or_default().entry(r.n_individuals).or_default().insert(r.strategy, r);
    }
    let mut header = vec!["population".to_owned()];
    for s in StrategyKind::ALL {
        for m in ["deaths", "avg_qt", "sons_inter", "to_failures"] {
            header.push(format!("{}_{m}", s.short_name()));
        }
    }
    let mut tables = BTreeMap::new();
    for (t, pops) in by_threshold {
        let mut text = format!("# threshold {t}\n{}\n", header.join(" "));
        for (n, per) in pops {
            let mut cols = vec![n.to_string()];
            for s in StrategyKind::ALL {
                match per.get(&s) {
                    Some(r) => cols.extend([
                        num(r.deaths.mean),
                        opt(r.avg_qt.map(|q| q.mean)),
                        num(r.sons_inter.mean),
                        num(r.to_failures.mean),
                    ]),
                    None => cols.extend(std::iter::repeat_n(NA.to_owned(), 4)),
                }
            }
            text.push_str(&cols.join(" "));
            text.push('\n');
        }
        tables.insert(t, text);
    }
    Ok(tables)
}

/// Writes `threshold_<T>.dat` files and returns their paths.
pub fn emit_plot_data(rows: &[SummaryRow], outdir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    let tables = plot_tables(rows)?;
    std::fs::create_dir_all(outdir).map_err(|source| OutputError::File { path: outdir.to_owned(), source })?;
    let mut paths = Vec::new();
    for (t, text) in tables {
        let path = outdir.join(format!("threshold_{t}.dat"));
        std::fs::write(&path, text).map_err(|source| OutputError::File { path: path.clone(), source })?;
        paths.push(path);
    }
    Ok(paths)
}
