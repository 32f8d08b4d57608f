use thiserror::Error;

pub type Result<T> = std::result::Result<T, OdosError>;

#[derive(Debug, Error)]
pub enum OdosError {
    #[error("invalid study frame: {0}")]
    InvalidFrame(String),

    #[error("index out of bounds: {what} {index} (limit {limit})")]
    IndexOutOfBounds {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("duplicate plan entry (unit {unit}, variable {variable}, time {time})")]
    DuplicateEntry {
        unit: usize,
        variable: usize,
        time: usize,
    },

    #[error("entry (unit {unit}, variable {variable}, time {time}) is not admissible in this frame")]
    NotAdmissible {
        unit: usize,
        variable: usize,
        time: usize,
    },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("design support has {size} plans, above the enumeration limit {limit}")]
    SupportTooLarge { size: f64, limit: usize },

    #[error("hierarchical cost requires a frame with a hierarchy")]
    MissingHierarchy,

    #[error("invalid model specification: {0}")]
    InvalidModel(String),

    #[error("data are incompatible with the model: {0}")]
    IncompatibleData(String),

    #[error("non-finite observed value at (unit {unit}, variable {variable}, time {time})")]
    NonFiniteValue {
        unit: usize,
        variable: usize,
        time: usize,
    },

    #[error("importance weights degenerate: effective sample size {ess:.2} < 10")]
    DegenerateWeights { ess: f64 },

    #[error("matrix is numerically singular (condition number {condition:e})")]
    SingularMatrix { condition: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("search space has {size} feasible subsets, above the limit {limit}")]
    SpaceTooLarge { size: f64, limit: usize },

    #[error("candidate pool exhausted: {0}")]
    PoolExhausted(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("parse error at {path} (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OdosError {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            OdosError::Infeasible(_) => 2,
            _ => 1,
        }
    }
}
