//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Rotary spec construction or validation failed (odd dimension, bad theta, ...).
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// Matrix/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument is outside its documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A decay policy violates its invariants.
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    /// An index fell outside the token grid.
    #[error("index out of range: {0}")]
    Bounds(String),

    /// Non-finite values where finite arithmetic is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A computation would exceed a configured resource cap.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
