use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SatnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SatnError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(satn_core::Error),
}

impl SatnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SatnError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        SatnError::Format { path: path.into(), reason: reason.into() }
    }

    /// Process exit status: 1 for usage and configuration problems, 3 for
    /// numeric aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            SatnError::Numeric(_) => 3,
            SatnError::Core(e) if is_numeric(e) => 3,
            _ => 1,
        }
    }
}

fn is_numeric(e: &satn_core::Error) -> bool {
    matches!(e, satn_core::Error::NonFinite { .. } | satn_core::Error::NonFiniteGradient(_))
}

impl From<satn_core::Error> for SatnError {
    fn from(e: satn_core::Error) -> Self {
        match e {
            satn_core::Error::Config { field, reason } => SatnError::Config(format!("`{field}`: {reason}")),
            other => SatnError::Core(other),
        }
    }
}

impl From<csv::Error> for SatnError {
    fn from(e: csv::Error) -> Self {
        SatnError::Dataset(e.to_string())
    }
}
