//! Experiment harness for the `lpi` command-line tool.

pub mod config;
pub mod experiment;

pub use config::{load, ConfigError, Experiment};
pub use experiment::{run_experiment, RunReport, SummaryRow};
