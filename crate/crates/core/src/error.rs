use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("column `{0}` has no observed values; cannot impute")]
    EmptyColumn(String),

    #[error("unknown trade type `{0}`")]
    UnknownTradeType(String),

    #[error("duplicate client id `{0}`")]
    DuplicateClient(String),

    #[error("transaction references unknown client `{0}`")]
    UnknownClient(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate clustering: {0}")]
    Degenerate(String),

    #[error("perplexity search failed for row {row}: {reason}")]
    PerplexitySearch { row: usize, reason: String },

    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),

    #[error("value {value} lies outside the bin edges [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
