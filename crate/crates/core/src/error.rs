use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FirdError>;

#[derive(Debug, Error)]
pub enum FirdError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric failure at inner iteration {iteration}: {message}")]
    Numeric { iteration: usize, message: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl FirdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FirdError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised by the optimizer rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, FirdError::Numeric { .. })
    }
}
