use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("nomination references unknown performer `{0}`")]
    UnknownPerformer(String),

    #[error("award {award_index} has {winners} winners, expected exactly one")]
    MalformedStratum { award_index: u32, winners: usize },

    #[error("performer `{performer_id}` died before award {award_index} was announced")]
    DiedBeforeAward {
        performer_id: String,
        award_index: u32,
    },

    #[error("duplicate nomination of `{performer_id}` for award {award_index}")]
    DuplicateNomination {
        performer_id: String,
        award_index: u32,
    },

    #[error("inconsistent record: {0}")]
    InconsistentRecord(String),

    #[error("invalid censoring: censor date precedes award date by {days} days")]
    InvalidCensoring { days: i64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("no convergence after {iterations} iterations (last max |score| = {max_score:e})")]
    NonConvergence {
        iterations: usize,
        max_score: f64,
        last: Vec<f64>,
    },

    #[error("monotone likelihood: coefficient `{0}` diverges (complete separation)")]
    MonotoneLikelihood(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("not enough informative strata: {found} (need at least {needed})")]
    TooFewStrata { found: usize, needed: usize },

    #[error("no estimate: theta(psi) never changes sign and max p-value {max_p:.4} < {alpha}")]
    NoEstimate { max_p: f64, alpha: f64 },

    #[error("p-value curve is not unimodal on the search grid; test inversion is ambiguous")]
    AmbiguousInversion { curve: Vec<(f64, f64, f64)> },

    #[error("median of the {0} survival curve is not reached")]
    UndefinedMedian(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("{failed} of {total} replications failed for `{method}` (limit 5%)")]
    Unreliable {
        method: String,
        failed: usize,
        total: usize,
    },

    #[error("partial report: missing sections {0:?}")]
    PartialReport(Vec<String>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
