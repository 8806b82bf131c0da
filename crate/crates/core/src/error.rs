use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Brute-force oracle asked to work on an instance beyond its cap.
    #[error("oracle limited to {cap} elements, got {size}")]
    OracleScale { size: usize, cap: usize },

    /// Empirical estimate undefined because a configuration has no data.
    /// `config` is 1-based.
    #[error("parent configuration {config:?} has zero observations")]
    ZeroCount { config: Vec<usize> },

    #[error("no convergence after {cycles} cycles (residual {residual:e})")]
    Convergence {
        cycles: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("more than {cap} extreme points")]
    EnumerationCap { cap: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("column `{column}`: value {value} outside 1..={cardinality}")]
    Range {
        column: String,
        value: f64,
        cardinality: usize,
    },

    #[error("discretization error: {0}")]
    Discretization(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
