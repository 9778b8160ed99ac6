use thiserror::Error;

/// Errors produced by the explanation engine.
#[derive(Debug, Error)]
pub enum MaceError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row error at line {line}: {message}")]
    Row { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("target class {0} is unreachable (no training points predicted in it)")]
    TargetUnreachable(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("scorer transport error: {0}")]
    Transport(String),

    #[error("scorer protocol error: {0}")]
    Protocol(String),

    #[error("enumeration bound exceeded: {actual} assignments > {limit}")]
    EnumerationBound { actual: u64, limit: u64 },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MaceError>;
