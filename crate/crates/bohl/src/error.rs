use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("coefficient A({0}) is not invertible (reciprocal condition number below floor)")]
    NonInvertibleCoefficient(usize),
    #[error("perturbed coefficient (A+Q)({0}) is not invertible")]
    NonInvertiblePerturbed(usize),
    #[error("time index {index} exceeds the horizon {horizon}")]
    HorizonExceeded { index: usize, horizon: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no admissible window exists for threshold N = {0}")]
    EmptyWindowSet(usize),
    #[error("basis vectors are not linearly independent")]
    DegenerateBasis,
    #[error("splitting bases do not span the full space")]
    DegenerateSplitting,
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("vector does not lie in the distinguished subspace")]
    NotInSubspace,
    #[error("perturbation support index {0} exceeds the horizon")]
    SupportExceedsHorizon(usize),
    #[error("zero vector is not admissible here")]
    ZeroVector,
    #[error("vector is not epsilon-slow for the given map")]
    NotSlow,
    #[error("rotation plane is underdetermined for a near-antipodal pair")]
    AntipodalPair,
    #[error("window is degenerate: need k < m")]
    WindowDegenerate,
    #[error("matrix is not invertible")]
    NonInvertible,
    #[error("no admissible subsequence pair exists at stage 0")]
    PrefixEmpty,
    #[error("no admissible window remains before the horizon at stage {0}")]
    StageExhausted(usize),
    #[error("surrogate hypothesis failed at step `{step}`: {detail}")]
    SurrogateHypothesisFailed { step: &'static str, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("scenario validation: {0}")]
    ScenarioValidation(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
