//! Experiment-grid harness: config files, parallel grid execution and
//! CSV/plot-data output.

pub mod config;
pub mod grid;
pub mod output;

pub use config::{parse_config, parse_config_str, Cell, ConfigFileError, ExperimentGrid};
pub use grid::{run_grid, GridError, GridOutput};
pub use output::{emit_plot_data, read_summary, write_results, write_summary, OutputError};
