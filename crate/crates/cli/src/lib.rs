//! Library surface of the experiment CLI, split out so integration tests
//! can drive commands directly.

pub mod commands;
pub mod config;

pub use commands::{cmd_compare, cmd_decompose, cmd_sweep, cmd_train, CliFailure, Manifest};
pub use config::{ExperimentConfig, GraphSource, ObjectiveSpec, PolicySpec, TimeModelSpec};
