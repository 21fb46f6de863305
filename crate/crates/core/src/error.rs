use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum HegError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("sequence too short: {frames} frames available, tube needs {tau}")]
    SequenceTooShort { frames: usize, tau: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HegError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HegError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for bad or unreadable data, 3 for numeric
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HegError::Numeric(_) | HegError::Divergence { .. } | HegError::Internal(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HegError>;
