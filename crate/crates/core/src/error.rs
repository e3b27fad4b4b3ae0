//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the core crate.
///
/// `InvalidArgument` covers caller mistakes (bad shapes requested, bad
/// hyperparameters), `ShapeMismatch` covers incompatible operands detected at
/// op boundaries, `DegenerateInput` covers inputs that are structurally valid
/// but unusable (empty batches, collapsed embeddings), and `NumericFailure`
/// covers non-finite values or iterative routines that fail to converge.
#[derive(Debug, Error)]
pub enum KdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),
}

impl KdError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        KdError::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        KdError::ShapeMismatch(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        KdError::DegenerateInput(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        KdError::NumericFailure(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, KdError>;
