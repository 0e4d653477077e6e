use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shapes, dimensions, ranges).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("simulation diverged: {0}")]
    Diverged(String),
    #[error("config error (line {line}): {msg}")]
    Config { line: usize, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
