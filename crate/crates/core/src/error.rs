use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}` (expected one of: lg, nn, sv)")]
    UnknownModel(String),

    #[error("unknown method `{0}` (expected one of: lmc-bnn, lmc-blr, bolfi)")]
    UnknownMethod(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("kernel matrix is not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("design matrix is rank deficient in dimension {dim}")]
    RankDeficient { dim: usize },

    #[error("objective {objective} is outside the current window of {n_objectives} objectives")]
    ObjectiveOutOfRange {
        objective: usize,
        n_objectives: usize,
    },

    #[error("missing posterior for time index {0}")]
    MissingPosterior(usize),

    #[error("transition model is untrained")]
    Untrained,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("simulator failed at theta = {theta:?}: {reason}")]
    Simulator { theta: Vec<f64>, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("unsupported record format `{format}` version {version}")]
    UnsupportedRecord { format: String, version: u32 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
