use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("{active} active units exceed the cap of {cap}")]
    SizeCap { active: usize, cap: usize },

    #[error("degenerate temperature ladder: {0}")]
    Ladder(String),

    #[error("population collapse at ladder step {step}: effective sample size {ess:.3}")]
    PopulationCollapse { step: usize, ess: f64 },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
