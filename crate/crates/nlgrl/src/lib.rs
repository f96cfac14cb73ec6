//! File formats, checkpoints, experiment configuration and the multi-seed
//! harness around `nlgrl-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod harness;
pub mod io;
pub mod manifest;
pub mod report;

pub use config::{ExperimentConfig, Preset};
pub use harness::{run_experiment, ExperimentOutcome, HarnessError, SeedOutcome};
pub use report::EvalReport;
