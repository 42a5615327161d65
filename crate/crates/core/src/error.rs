use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty series")]
    EmptySeries,

    #[error("feature dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid patient record {patient}: {reason}")]
    InvalidPatient { patient: String, reason: String },

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("unknown modality {0}")]
    UnknownModality(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("instance {0} not present in distance block")]
    MissingInstance(String),

    #[error("rank {rank} must be smaller than matrix size {size}")]
    RankTooLarge { rank: usize, size: usize },

    #[error("{axis} {id} has no observed entries")]
    FullyMasked { axis: &'static str, id: String },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("feature vector has length {actual}, model expects {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("need at least {needed} positives and {needed} negatives, got {positives} and {negatives}")]
    TooFewExamples {
        needed: usize,
        positives: usize,
        negatives: usize,
    },

    #[error("degenerate cohort: {0}")]
    DegenerateCohort(String),

    #[error("every inner fold was degenerate")]
    AllInnerFoldsSkipped,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }
}
