use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trace")]
    EmptyTrace,

    #[error("unquantized sample at index {index}: {value} is not a member of the level set")]
    UnquantizedSample { index: usize, value: f64 },

    #[error("trace too short: need at least {need} samples, got {got}")]
    TraceTooShort { need: usize, got: usize },

    #[error("cannot scale zero trace")]
    ZeroTrace,

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no forward progress: simulated time exceeded the {limit_s} s watchdog limit")]
    NoForwardProgress { limit_s: f64 },

    #[error("{path}: line {line}, {field}: {message}")]
    CsvParse {
        path: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("{path}: {message}")]
    FileFormat { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
