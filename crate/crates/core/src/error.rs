//! Error types shared across the core library.

use thiserror::Error;

/// Errors surfaced by core operations on bad data or configuration.
///
/// Programming-contract violations (dimension mismatches inside the neural
/// stack, tape reuse) panic instead; they indicate bugs, not bad inputs.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },

    #[error("graph/cost mismatch: {0}")]
    CostMismatch(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("problem size exceeds bound: {0}")]
    TooLarge(String),

    #[error("unknown detection id {0}")]
    UnknownDetection(crate::DetId),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
