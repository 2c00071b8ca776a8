use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] synfaith_core::Error),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("csv {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl AppError {
    /// Process exit code: 2 for protocol violations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Protocol(_) => 2,
            AppError::Core(synfaith_core::Error::Evaluation { source, .. }) if source.is_protocol() => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Io { path, source }
    }

    pub fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> AppError {
        let path = path.into();
        move |e| AppError::Parse {
            path,
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }

    pub fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Csv { path, source }
    }
}
