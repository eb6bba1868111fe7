use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;
use ventrate_core::io::FormatError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    pub fn config(msg: impl ToString) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Format { .. } | CliError::Io { .. } => 3,
            CliError::Internal(_) => 4,
        })
    }
}

pub type CliResult<T> = Result<T, CliError>;
