//! Library side of the `glevy` command: configuration, reports, the
//! subcommands and the acceptance suite behind `verify all`.

pub mod commands;
pub mod config;
pub mod report;
pub mod suite;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(glevy_core::Error),
    #[error("numeric error: {0}")]
    Numeric(#[from] glevy_core::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(e: glevy_core::Error) -> Self {
        CliError::Input(e)
    }

    /// 2 for unusable configuration, 3 for failures during computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }
}
