use thiserror::Error;

/// Errors raised by the precoding library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The design problem has no feasible point (certified by the conic solver).
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// A solver returned something a correct solver never should.
    #[error("internal solver error: {0}")]
    Internal(String),
    #[error("constraint audit failed: {0}")]
    AuditFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
