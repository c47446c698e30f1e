use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree shape: {0}")]
    InvalidShape(String),
    #[error("invalid address: {0}")]
    InvalidAddress(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("excursion cap of {cap} steps exceeded")]
    ExcursionCapExceeded { cap: u64 },
    #[error("empty sample: {0}")]
    EmptySample(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("{aborted} of {total} replicates aborted")]
    TooManyAborted { aborted: usize, total: usize },
    #[error("malformed field dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
