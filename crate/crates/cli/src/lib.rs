//! Command-line front end: data preparation, training, generation,
//! evaluation, gradient checks and ablations.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::dispatch;
pub use config::{parse_config, parse_config_str, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
