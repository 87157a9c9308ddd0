use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("orbit left the domain at step {step}")]
    Escape { step: usize },

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domination violated at index {index}: e + u = {value} exceeds log lambda = {bound}")]
    DominationViolated { index: usize, value: f64, bound: f64 },

    #[error("cone violation at step {step} for sample {sample}")]
    ConeViolation { step: usize, sample: usize },

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("calibration failure: {0}")]
    Calibration(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
