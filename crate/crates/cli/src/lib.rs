//! Experiment runner for the pliss-lab laboratory: configuration, named
//! experiments and report emission.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{ExperimentConfig, Overrides, UsageError};
pub use experiments::{run_experiment, Outcome, Status};
pub use report::{manifest, write_outputs};
