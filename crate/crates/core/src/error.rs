use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error at layer {layer}: {message}")]
    Dimension { layer: usize, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid split plan: {0}")]
    Plan(String),
    #[error("cannot merge parts: {0}")]
    Merge(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("IDX format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
