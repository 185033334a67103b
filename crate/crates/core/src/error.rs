use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file {path}")]
    MissingFile { path: PathBuf },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: String, index: usize },

    #[error("duplicate variable name {0:?}")]
    DuplicateVariable(String),

    #[error("unknown variable {0:?}")]
    UnknownVariable(String),

    #[error("series too short: need at least {need}, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("zero variance for variable {0:?} in the fit range")]
    ZeroVariance(String),

    #[error("calendar day {day_of_year} pools only {got} samples (need {need})")]
    InsufficientPool { day_of_year: u32, got: usize, need: usize },

    #[error("empty region mask {0:?}")]
    EmptyMask(String),

    #[error("no days of the requested season in the record")]
    NoSeasonDays,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("date {0} falls outside every period bin")]
    OutsideBins(chrono::NaiveDate),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("key mismatch: {0}")]
    KeyMismatch(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }
}
