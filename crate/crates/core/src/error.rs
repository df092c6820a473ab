use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input of {len} tokens exceeds the context window of {max}")]
    OverlongInput { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("invalid loss mask: {0}")]
    InvalidMask(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize, loss: f64 },
    #[error("secret pool exhausted: {found} distinct secrets after {draws} draws")]
    PoolExhausted { found: usize, draws: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed container: {0}")]
    Format(String),
    #[error("container checksum mismatch")]
    ChecksumMismatch,
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("endpoint protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
