use std::path::PathBuf;

use drumsmith_nn::NnError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("track {track} has {found} {what}, expected {expected}")]
    TrackLengthMismatch {
        track: String,
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("velocity {value} out of range in track {track} at offset {offset}")]
    VelocityOutOfRange { track: String, offset: usize, value: u8 },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange { what: &'static str, index: usize, size: usize },
    #[error("song has no non-silent bar")]
    EmptySong,
    #[error("expected resolution {expected}, found {found}")]
    BadResolution { expected: u32, found: u32 },
    #[error("song has {bars} bars, at least {needed} are required")]
    SongTooShort { bars: usize, needed: usize },
    #[error("token sequence has more than {max} SHIFT tokens")]
    TooManyShifts { max: usize },
    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown decoder variant {0:?}")]
    UnknownVariant(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("bin mismatch: {left} vs {right}")]
    BinMismatch { left: usize, right: usize },
    #[error("input has no onsets")]
    EmptyInput,
    #[error("invalid merge map: {0}")]
    InvalidMergeMap(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed data file {path}: {reason}")]
    MalformedData { path: PathBuf, reason: String },
    #[error(transparent)]
    Nn(NnError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<NnError> for Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::CheckpointMismatch(msg) => Error::CheckpointMismatch(msg),
            other => Error::Nn(other),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
