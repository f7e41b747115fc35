use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tilt out of domain: {constraint}")]
    TiltOutOfDomain { constraint: String },

    #[error("tilt solve failed after {iterations} iterations (last residual {residual:e})")]
    TiltSolveFailed { iterations: usize, residual: f64 },

    #[error("U-model required: a nonlinear u map must carry an explicit model for U")]
    UModelRequired,

    #[error("conditioning drifted out of domain at step {step}: mean {mean:?} is not attainable")]
    DriftedOutOfDomain { step: usize, mean: Vec<f64> },

    #[error("normalization failed: {0}")]
    NormalizationFailed(String),

    #[error("no sampler available: {0}")]
    NoSampler(String),

    #[error("AR starved after {tries} tries (estimated acceptance rate {rate:e})")]
    ArStarved { tries: usize, rate: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("no ABC acceptances; try a larger tolerance than {tolerance}")]
    NoAcceptances { tolerance: f64 },

    #[error("sample too small: {got} draws, need at least {needed}")]
    SampleTooSmall { got: usize, needed: usize },

    #[error("numeric overflow in {0}")]
    Overflow(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory {index}: {source}")]
    AtTrajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },
}

impl Error {
    pub fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    pub fn at_trajectory(self, index: usize) -> Error {
        Error::AtTrajectory {
            index,
            source: Box::new(self),
        }
    }

    /// Innermost error, with step/trajectory wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::AtTrajectory { source, .. } => source.root(),
            e => e,
        }
    }
}
