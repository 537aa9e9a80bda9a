//! Experiment runner for `oedflow-core`: configuration files and presets,
//! CSV and JSON exporters, and the subcommands behind the `oedflow` binary.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;
pub mod presets;

pub use config::{Assignment, ConfigError, ExperimentConfig};
pub use presets::Preset;

use std::path::PathBuf;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const NUMERIC: u8 = 3;
    pub const CHECK_FAILED: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: oedflow_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn core(context: impl Into<String>) -> impl FnOnce(oedflow_core::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Core { context, source }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Format { .. } => exit::CONFIG,
            CliError::Core { source, .. } if source.is_config_error() => exit::CONFIG,
            CliError::Core { .. } => exit::NUMERIC,
            CliError::Io { .. } => exit::IO,
            CliError::CheckFailed(_) => exit::CHECK_FAILED,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
