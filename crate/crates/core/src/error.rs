use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: malformed edge line {text:?}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        text: String,
    },

    #[error("{0}: no edges found")]
    EmptyEdgeList(PathBuf),

    #[error("user {user} out of range (n = {n})")]
    UserOutOfRange { user: usize, n: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
