//! Command-line experiments: configuration loading, the walking runs and
//! their artifacts, and the Poincaré stability check.

pub mod commands;
pub mod config;
mod error;
pub mod output;

pub use commands::{cmd_fit_gait, cmd_run, cmd_stability, FitReport, RunReport, StabilityReport};
pub use config::{load_config, Experiment, ExperimentConfig, RunMode};
pub use error::{CliError, Exit};
