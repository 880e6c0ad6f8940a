use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data that does not satisfy an operation's shape or content contract.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// Invalid configuration (hyperparameters, layer plumbing, filter specs).
    #[error("configuration error: {0}")]
    Config(String),

    /// Frame or dataset ingestion failure.
    #[error("ingestion error at {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    /// A finite-difference or analytic oracle could not produce a value.
    #[error("oracle failure at coordinate {index}: {reason}")]
    Oracle { index: usize, reason: String },

    /// Training diverged.
    #[error("training aborted at iteration {iteration} ({layer}): {reason}")]
    Training {
        iteration: u64,
        layer: String,
        reason: String,
    },

    #[error("container format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wraps an error with the file it concerns.
    pub fn with_path(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Io(e) => Error::Ingestion {
                path: path.into(),
                reason: e.to_string(),
            },
            Error::Image(e) => Error::Ingestion {
                path: path.into(),
                reason: e.to_string(),
            },
            other => other,
        }
    }
}
