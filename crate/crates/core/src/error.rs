use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("source index {index} out of range for {n_sources} sources")]
    SourceIndex { index: usize, n_sources: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("failed to parse `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("solver diverged at iteration {iter} (objective {objective})")]
    Divergence { iter: usize, objective: f64 },

    #[error("no positive labels; recall is undefined")]
    NoPositives,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Argument(_) => ErrorClass::Usage,
            Error::Shape { .. }
            | Error::SourceIndex { .. }
            | Error::Validation(_)
            | Error::Parse { .. }
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Validation,
            Error::Divergence { .. } | Error::NoPositives => ErrorClass::Numerical,
            Error::Io { .. } => ErrorClass::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
