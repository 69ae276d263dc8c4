//! Batch front end for the `nlcontrol` library: configuration files, the
//! `solve`, `optimize` and `study` commands, and their CSV and manifest
//! artifacts.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{execute, Command, Options, Outcome};
pub use config::Config;
pub use output::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The configuration (or a manifest it points to) is unusable.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::Io(_) => 2,
        }
    }
}
