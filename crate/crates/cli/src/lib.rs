//! Batch experiments over `riskdyn`: JSON configs in, CSV and JSON out.

pub mod config;
pub mod error;
pub mod output;
pub mod tasks;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use tasks::{execute, prepare, run_file, validate_file, RiskReport};
