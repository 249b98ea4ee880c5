use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("curves are not on the same grid")]
    GridMismatch,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("grid of {points} points is too short for {what}")]
    GridTooShort { points: usize, what: String },
    #[error("spline design is rank deficient ({0}); reduce the number of knots")]
    RankDeficient(String),
    #[error("projection semi-metric has not been trained")]
    UntrainedProjection,
    #[error("invalid projection dimension {dim} (must be in 1..={max})")]
    InvalidDimension { dim: usize, max: usize },
    #[error("no training curve within bandwidth {0}")]
    EmptyNeighborhood(f64),
    #[error("invalid bandwidth {0}: must be positive and finite")]
    InvalidBandwidth(f64),
    #[error("every bandwidth candidate was disqualified by cross-validation")]
    AllCandidatesDisqualified,
    #[error("all pairwise distances are zero; cannot build a bandwidth grid")]
    DegenerateDistances,
    #[error("example ex3 requires derivative curves")]
    MissingDerivative,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{failed} of {total} replications failed: {detail}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        detail: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },
    #[error("{path} has changed since the model was fitted (sha256 {expected}, found {found})")]
    HashMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn csv(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Csv {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    /// True for failures caused by reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Csv { .. } | Error::HashMismatch { .. } | Error::Json(_))
    }
}
