//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation produced NaN or infinity from finite inputs.
    #[error("non-finite values produced by `{op}`")]
    NonFinite { op: &'static str },

    /// A stated precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A feature with zero L2 norm cannot be cosine-normalized.
    #[error("zero-norm feature cannot be normalized")]
    ZeroNorm,

    /// Rejection sampling exceeded its trial budget.
    #[error("sampling infeasible: {0}")]
    SamplingInfeasible(String),

    /// A batch-level operation received no usable data.
    #[error("empty batch")]
    EmptyBatch,

    /// Bad configuration key or value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed, inconsistent, or missing data files.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Training aborted because a loss term stopped being finite.
    #[error("training aborted: non-finite loss at {context}")]
    NonFiniteLoss { context: String },
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Shape(_)
            | Error::NonFinite { .. }
            | Error::ZeroNorm
            | Error::SamplingInfeasible(_)
            | Error::EmptyBatch
            | Error::NonFiniteLoss { .. } => 3,
        }
    }
}
