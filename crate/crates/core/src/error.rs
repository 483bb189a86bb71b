use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {0:e} is too small to normalize")]
    ZeroNorm(f64),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input too short: need {needed} frames, have {available}")]
    TooShort { needed: usize, available: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("gradient tape was already consumed by a backward pass")]
    StaleTape,
    #[error("contrastive batch too small: need at least {needed}, got {got}")]
    BatchTooSmall { needed: usize, got: usize },
    #[error("negative queue is empty")]
    EmptyQueue,
    #[error("too few points for clustering: {points} points, {clusters} clusters")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("prototype bank has not been fitted")]
    BankNotFitted,
    #[error("target p_fn {target} exceeds the natural p_fn {natural}")]
    TargetAboveNatural { target: f64, natural: f64 },
    #[error("expected {expected} views, got {got}")]
    ViewCountMismatch { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("learning-rate step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("checkpoint incompatible with configuration: {0}")]
    ConfigMismatch(String),
    #[error("trial set needs at least one target and one non-target trial")]
    DegenerateTrialSet,
    #[error("within-class scatter is singular")]
    SingularScatter,
    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unknown utterance id `{0}`")]
    UnknownId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::NonPositiveTemperature(_)
                | Error::TargetAboveNatural { .. }
                | Error::ConfigMismatch(_)
                | Error::UnknownId(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
