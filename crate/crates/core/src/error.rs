use thiserror::Error;

/// Errors raised by the estimation and selection pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    #[error("action {action} out of range for {n_actions} actions")]
    ActionOutOfRange { action: usize, n_actions: usize },

    #[error("full-support violation: behavior propensity {0} is not positive")]
    FullSupportViolation(f64),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stale forward cache: computed for parameter generation {cached}, parameters are at {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate partition rate {0}: expected subsampling rate must lie strictly inside (0, 1)")]
    DegenerateRate(f64),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("subsampler training failed: {0}")]
    TrainingFailure(String),

    #[error("not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
