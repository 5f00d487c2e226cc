use thiserror::Error;

/// Errors raised by tensor, network and coarse-graining operations.
#[derive(Debug, Error)]
pub enum TnsError {
    /// Leg dimensions disagree where a contraction or trace pairs them.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed arguments: unknown legs, duplicate pairings, bad partitions, invalid specs.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A computation would exceed a configured size or enumeration cap.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Non-finite values or a collapsed (all-zero) network.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TnsError> = std::result::Result<T, E>;

macro_rules! arg_err {
    ($($t:tt)*) => { $crate::error::TnsError::Argument(format!($($t)*)) };
}
macro_rules! shape_err {
    ($($t:tt)*) => { $crate::error::TnsError::Shape(format!($($t)*)) };
}
pub(crate) use arg_err;
pub(crate) use shape_err;
