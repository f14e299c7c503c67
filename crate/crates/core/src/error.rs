use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or violated precondition detected before work starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (images, ids, records).
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint is truncated: {0}")]
    Truncated(String),

    #[error("vocabulary layout mismatch: checkpoint {found}, expected {expected}")]
    LayoutMismatch { found: String, expected: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("prerequisite missing: {0}")]
    Prerequisite(String),

    #[error("network error: {0}")]
    Network(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors caused by bad user input or configuration, as opposed
    /// to failures while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Invalid(_)
                | Error::Manifest { .. }
                | Error::LayoutMismatch { .. }
                | Error::Prerequisite(_)
        )
    }
}
