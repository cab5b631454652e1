//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or CLI usage (exit code 1).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Malformed or inconsistent data (exit code 2).
    #[error("data error: {0}")]
    Data(String),

    /// CSV parse failure with a 1-based file line number (exit code 2).
    #[error("csv error at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    /// Shape disagreement between tensors, layers, or batches (exit code 2).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation received an empty batch (exit code 2).
    #[error("empty batch: {0}")]
    EmptyBatch(String),

    /// A group id without an estimated rate (exit code 2).
    #[error("unknown group id {0}")]
    UnknownGroup(usize),

    /// A metric has no defined value on the given input (exit code 3).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// Optimizer step attempted on a frozen network (exit code 3).
    #[error("network is frozen: {0}")]
    Frozen(String),

    /// Non-finite values or other numeric breakdown (exit code 3).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 1,
            Error::Data(_)
            | Error::Csv { .. }
            | Error::ShapeMismatch(_)
            | Error::EmptyBatch(_)
            | Error::UnknownGroup(_)
            | Error::Io(_) => 2,
            Error::UndefinedMetric(_) | Error::Frozen(_) | Error::Numeric(_) => 3,
        }
    }
}
