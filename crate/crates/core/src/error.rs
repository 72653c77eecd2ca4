use thiserror::Error;

/// Errors raised by the library. Precondition and configuration failures map
/// to CLI exit code 2; everything else maps to 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("outside map domain: {0}")]
    Domain(String),
    #[error("inversion failed: {0}")]
    Inversion(String),
    #[error("invalid nodes in region: {0}")]
    InvalidNodes(String),
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("grid spec mismatch")]
    SpecMismatch,
    #[error("table range: {0}")]
    TableRange(String),
    #[error("config error in {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that indicate bad input rather than a failed computation.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Inversion(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
