use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("indices must be strictly increasing")]
    UnsortedIndices,
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty vector")]
    EmptyVector,
    #[error("need at least 2 filters, got {0}")]
    TooFewFilters(usize),
    #[error("pruning ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("layer {0} is not a convolution")]
    NotConv(usize),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("forward cache does not match the current graph")]
    StaleCache,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint checksum mismatch")]
    BadChecksum,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("malformed record in {path}: {reason}")]
    MalformedRecord { path: PathBuf, reason: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid value for {key}: {message}")]
    InvalidValue { key: String, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidValue {
            key: key.into(),
            message: message.into(),
        }
    }
}
