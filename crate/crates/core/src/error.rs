use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
///
/// Variants split into two families: caller mistakes (bad shapes, labels,
/// configs, illegal state transitions) and runtime failures (I/O, corrupt
/// artifacts). [`Error::is_validation`] tells them apart so the CLI can map
/// them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {actual:?}")]
    InputShape { expected: String, actual: Vec<usize> },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}: format error: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: consistency error: {msg}")]
    Consistency { path: PathBuf, msg: String },

    #[error("conflict: {0} already exists")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("corruption detected in {path}: expected checksum {expected}, found {actual}")]
    Corruption {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("illegal pipeline state: {0}")]
    State(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than the
    /// environment or stored artifacts.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InputShape { .. }
                | Error::Validation(_)
                | Error::Conflict(_)
                | Error::NotFound(_)
                | Error::State(_)
        )
    }
}
