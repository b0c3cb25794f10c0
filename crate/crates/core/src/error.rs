use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Input files or records are malformed or inconsistent.
    Data,
    /// A numerical routine could not produce an estimate.
    Numeric,
    /// A configuration value is out of range.
    Config,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: expected {expected} fields, found {found}")]
    MalformedRow { line: u64, expected: usize, found: usize },

    #[error("line {line}, column `{column}`: unknown symptom value `{value}` (expected 1, 0, NA or blank)")]
    UnknownSymptomValue { line: u64, column: String, value: String },

    #[error("line {line}: cause label `{label}` is not in the supplied cause set")]
    UnknownCause { line: u64, label: String },

    #[error("line {line}: labeled record has no cause")]
    MissingCause { line: u64 },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("cause column `{0}` present in an unlabeled file (use validation mode to keep it hidden)")]
    UnexpectedCauseColumn(String),

    #[error("dataset has no records")]
    EmptyDataset,

    #[error("invalid cause set: {0}")]
    InvalidCauseSet(String),

    #[error("invalid symptom subset: {0}")]
    InvalidSubset(String),

    #[error("not a simplex vector: {0}")]
    InvalidSimplex(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("symptom count mismatch: hospital has {hospital}, population has {population}")]
    SymptomCountMismatch { hospital: usize, population: usize },

    #[error("hospital and population use different cause sets")]
    CauseSetMismatch,

    #[error("cause `{0}` has no records in the hospital data")]
    CauseAbsent(String),

    #[error("operation requires cause labels on every record")]
    LabelsRequired,

    #[error("split leaves one side empty ({hospital} hospital / {population} population records)")]
    EmptySplit { hospital: usize, population: usize },

    #[error("no usable records remain after deleting incomplete observations")]
    NoUsableRecords,

    #[error("singular system (reciprocal condition number {rcond:e})")]
    Singular { rcond: f64 },

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    #[error("back calculation undefined: sensitivity + specificity = {sum} is too close to 1")]
    DegenerateDenominator { sum: f64 },

    #[error("simplex grid would need {points} points (limit {limit}); use a coarser resolution")]
    GridTooLarge { points: u128, limit: u128 },

    #[error("all {total} subset draws were skipped; lower the subset size")]
    AllSubsetsSkipped { total: usize },

    #[error("{skipped} of {total} subset draws were skipped (more than half); lower the subset size")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("{failed} of {total} bootstrap replicates failed (limit 20%); last error: {last}")]
    BootstrapFailure { failed: usize, total: usize, last: String },

    #[error("fold {fold} has no training records for cause `{cause}`")]
    FoldMissingTarget { fold: usize, cause: String },

    #[error("no candidate subset size was feasible on any fold")]
    NoFeasibleCandidate,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Io(_) => ErrorKind::Io,
            Parse { .. }
            | MalformedRow { .. }
            | UnknownSymptomValue { .. }
            | UnknownCause { .. }
            | MissingCause { .. }
            | MissingColumn(_)
            | UnexpectedCauseColumn(_)
            | EmptyDataset
            | InvalidCauseSet(_)
            | SymptomCountMismatch { .. }
            | CauseSetMismatch
            | CauseAbsent(_)
            | LabelsRequired
            | EmptySplit { .. }
            | FoldMissingTarget { .. } => ErrorKind::Data,
            InvalidSubset(_) | InvalidSimplex(_) | InvalidConfig(_) | GridTooLarge { .. } => {
                ErrorKind::Config
            }
            NoUsableRecords
            | Singular { .. }
            | Degenerate(_)
            | DegenerateDenominator { .. }
            | AllSubsetsSkipped { .. }
            | TooManySkipped { .. }
            | BootstrapFailure { .. }
            | NoFeasibleCandidate => ErrorKind::Numeric,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse { line, message: format!("{other:?}") },
        }
    }
}
