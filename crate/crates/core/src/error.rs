use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state is outside the positive-interaction set: P = {p:e} must be > 0")]
    OutsidePositiveSet { p: f64 },

    #[error("dimension n = {0} unsupported: ground states exist only for 1 <= n <= 5 (none for n >= 6)")]
    UnsupportedDimension(usize),

    #[error("field must be real and non-negative: {0}")]
    NotNonNegative(String),

    #[error("field is not materialized (amp = {amp}, dilation = {dilation})")]
    NotMaterialized { amp: f64, dilation: f64 },

    #[error("virial identities need the mass-resonance condition kappa = 1/2, got kappa = {0}")]
    MassResonance(f64),

    #[error("fixed-point iteration did not converge in {iterations} iterations (residual {residual:e})")]
    StepFailure { iterations: usize, residual: f64 },

    #[error("inconsistent result: {0}")]
    Inconsistent(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
