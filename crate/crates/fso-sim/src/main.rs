use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fso_sim::{emit_plot_data, parse_config, read_summary, run_grid, write_results, write_summary};

#[derive(Parser)]
#[command(name = "fso-sim", version, about = "Run TO/PO/FSO dispatch experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid and write per-run and summary CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Write the event log of every run here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Master seed; overrides the config file.
        #[arg(long, env = "FSO_SIM_SEED")]
        seed: Option<u64>,
    },
    /// Turn a summary CSV into one plot-data table per threshold.
    Plot {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let runtime = |e: &dyn std::fmt::Display| Failure::Runtime(e.to_string());
    match cli.command {
        Command::Run { config, out, summary, parallel, log, seed } => {
            if parallel == 0 {
                return Err(Failure::Config("--parallel must be at least 1".into()));
            }
            let mut grid = parse_config(&config).map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
            if let Some(s) = seed {
                grid.master_seed = s;
            }
            let result = run_grid(&grid, parallel, log.is_some()).map_err(|e| runtime(&e))?;
            write_results(create(&out)?, &result.runs).map_err(|e| runtime(&e))?;
            write_summary(create(&summary)?, &result.summary).map_err(|e| runtime(&e))?;
            if let Some(path) = log {
                let mut w = create(&path)?;
                for line in &result.log {
                    writeln!(w, "{line}").map_err(|e| runtime(&e))?;
                }
                w.flush().map_err(|e| runtime(&e))?;
            }
            eprintln!("{} runs written to {}", result.runs.len(), out.display());
        }
        Command::Plot { summary, outdir } => {
            let file = File::open(&summary).map_err(|e| Failure::Config(format!("{}: {e}", summary.display())))?;
            let rows = read_summary(file).map_err(|e| Failure::Config(format!("{}: {e}", summary.display())))?;
            for p in emit_plot_data(&rows, &outdir).map_err(|e| runtime(&e))? {
                eprintln!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
