//! Config-driven runner for the nrds check suites.

pub mod config;
pub mod output;
pub mod suites;

pub use config::{load, parse, Check, ConfigError, ExperimentConfig, Scenario};
pub use output::{run_experiment, RunStatus};
