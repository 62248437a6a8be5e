use std::path::PathBuf;

use lorma_core::LormaError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("failed to parse {}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },
    #[error("check failed: {0}")]
    Check(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: LormaError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn core(context: impl Into<String>, source: LormaError) -> Self {
        CliError::Core {
            context: context.into(),
            source,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => exit::USAGE,
            CliError::Check(_) => exit::CHECK_FAILED,
            CliError::Io { .. } => exit::IO,
            CliError::Core { source, .. } => match source {
                LormaError::Divergence { .. } => exit::DIVERGED,
                LormaError::Io(_) => exit::IO,
                LormaError::Shape { .. } | LormaError::Config(_) | LormaError::Format { .. } => {
                    exit::USAGE
                }
                LormaError::RankDeficient { .. }
                | LormaError::NumericalFailure { .. }
                | LormaError::NonFinite { .. }
                | LormaError::UndefinedMetric { .. } => exit::CHECK_FAILED,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
