use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("unknown operation `{0}` (corrupt genome)")]
    UnknownOp(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid genome: {0}")]
    InvalidGenome(String),
    #[error("genome parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("degenerate loss: non-finite {what} at position {position}")]
    DegenerateLoss { what: &'static str, position: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error in {file}: {message}")]
    Format { file: String, message: String },
    #[error("undefined statistic: {0}")]
    Undefined(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
