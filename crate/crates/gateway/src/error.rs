use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Core(#[from] bloom_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    /// A source could not be opened, bound or reached.
    #[error("connection error: {0}")]
    Connection(String),

    #[error("stream aborted: {malformed} of {lines} lines malformed (last: {last})")]
    TooManyMalformed { malformed: usize, lines: usize, last: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown session {0}")]
    UnknownSession(String),

    /// The session's actor has stopped.
    #[error("session {0} is closed")]
    SessionClosed(String),
}

impl GatewayError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GatewayError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;
