use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numerical error in sector two_Iz={sector}: {reason}")]
    Numerical { sector: i64, reason: String },

    #[error("sector dimension {dim} exceeds the exact-mode cap {cap}; use the large-K diagonal model instead")]
    CapExceeded { dim: usize, cap: usize },

    #[error("success probability underflow (log P = {log_p:.3e}); only log-space observables remain meaningful")]
    Underflow { log_p: f64 },

    #[error("inconsistent state: {0}")]
    Inconsistent(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
