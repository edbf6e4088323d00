//! Batch experiment commands for the fedakd simulator.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use commands::{cmd_analyze, cmd_gen_data, cmd_run, cmd_validate_theory};
pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;
