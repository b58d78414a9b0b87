use thiserror::Error;

/// Errors raised while building or evaluating a construction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("index {index} out of range (minimum {min})")]
    IndexOutOfRange { index: usize, min: usize },

    #[error("{op}: argument {x} outside the domain {domain}")]
    OutOfDomain {
        op: &'static str,
        x: f64,
        domain: &'static str,
    },

    #[error("depth {depth} exceeds the cap {cap}")]
    DepthExceeded { depth: usize, cap: usize },

    #[error("{op}: root finder did not converge in {iterations} iterations")]
    NoConvergence { op: &'static str, iterations: usize },

    #[error("derivative is unbounded at x = {x}")]
    Unbounded { x: f64 },

    #[error("branch {n} could not be constructed: {reason}")]
    ConstructionFailed { n: usize, reason: String },

    #[error("{op} is only defined for the {expected} variant")]
    VariantMismatch {
        op: &'static str,
        expected: &'static str,
    },

    #[error("x = {x} is the singular point q; request a one-sided derivative")]
    AtSingularPoint { x: f64 },
}

impl Error {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
