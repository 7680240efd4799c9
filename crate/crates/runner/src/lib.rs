//! Experiment orchestration on top of `natspace`: JSON configs, seeded
//! multi-run execution and report files.

pub mod cli;
pub mod config;
pub mod exec;
pub mod experiment;
pub mod output;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use experiment::{run_experiment, run_on, Outcome};
