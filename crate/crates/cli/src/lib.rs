//! Library side of the `lorma` binary, so that integration tests can drive
//! the same code paths.

pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::{exit, CliError, Result};
