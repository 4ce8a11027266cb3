use std::path::PathBuf;

use kaa_core::KaaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// A check the command runs did not hold.
    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] KaaError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for bad arguments or config, 3 for file problems, 4 when a bound
    /// check fails, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                KaaError::Parameter(_) | KaaError::Size(_) => 2,
                KaaError::Io(_) | KaaError::Parse { .. } => 3,
                KaaError::TheoremCheck(_) => 4,
                _ => 1,
            },
            CliError::Failed(_) | CliError::Json(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
