pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward called without a cached forward pass in {0}")]
    MissingCache(&'static str),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("data format error: {0}")]
    Format(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}
