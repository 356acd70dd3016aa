use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes, invalid hyperparameters or an operation that the
    /// current configuration cannot satisfy.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced NaN or Inf.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed IDX payload. `offset` is the byte position of the defect.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// The unlabeled pool cannot supply the requested number of ids.
    #[error("pool exhausted: requested {requested}, unlabeled set holds {available}")]
    PoolExhausted { requested: usize, available: usize },

    /// An operation violated pool bookkeeping (e.g. labeling an id twice).
    #[error("logic error: {0}")]
    Logic(String),

    /// A probability vector or similar input failed validation.
    #[error("input error: {0}")]
    Input(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
