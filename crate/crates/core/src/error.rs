use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed weight description; `index` points at the offending
    /// breakpoint or segment.
    #[error("structural error at index {index}: {reason}")]
    Structure { index: usize, reason: String },

    #[error("weight violates hypothesis: {0}")]
    Hypothesis(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("lambda = {lambda} is within guard distance of sigma_{k} = {sigma}")]
    Resonance { k: usize, sigma: f64, lambda: f64 },

    #[error("coefficient structure not supported: {0}")]
    Unsupported(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("degenerate trajectory: {0}")]
    Degenerate(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
