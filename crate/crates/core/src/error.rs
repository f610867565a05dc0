use thiserror::Error;

/// Errors raised by the analysis and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure: {message} (condition estimate {condition:e})")]
    Numeric { message: String, condition: f64 },

    #[error("mode {mode} is not a valid observable mode (observable modes: {n0})")]
    InvalidMode { mode: usize, n0: usize },

    #[error("mode {0} is unobservable; sensitivity to sensing errors is infinite")]
    InfiniteSensitivity(usize),

    #[error("cannot partition {subsystems} subsystems into {groups} equal groups")]
    Partition { subsystems: usize, groups: usize },

    #[error("frequency {value} on axis {axis} is not on the lattice grid 2*pi*k/{size}")]
    OffGrid {
        axis: usize,
        value: f64,
        size: usize,
    },

    #[error("spatial mode is undefined: no sensor offset sees this frequency")]
    UndefinedMode,

    #[error("rank-deficient estimation: {0}")]
    RankDeficient(String),

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    #[error("unsupported plant structure: {0}")]
    UnsupportedStructure(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("trace mismatch: {0}")]
    TraceMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
