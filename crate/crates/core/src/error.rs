use thiserror::Error;

/// Errors raised by the segmentation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("label count must be at least 2, got {0}")]
    InvalidLabelCount(usize),

    #[error("label {label} out of range for q = {q}")]
    LabelOutOfRange { label: usize, q: usize },

    #[error("disagreement rate {u} outside the admissible range (0, {max}]")]
    DisagreementOutOfDomain { u: f64, max: f64 },

    #[error("covariance of label {label} is not positive definite")]
    NotPositiveDefinite { label: usize },

    #[error("state space q^n = {q}^{n} exceeds the enumeration cap")]
    StateSpaceTooLarge { q: usize, n: usize },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no fixed point converged: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
