//! File-based pipeline around `lrtv4d-core`: phantom generation, degradation,
//! reconstruction, baselines, metrics and functional connectivity.

pub mod commands;
pub mod config;
pub mod error;
pub mod volume_io;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
