use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("video too short: {frames} frames, segment length {seg_len}")]
    VideoTooShort { frames: usize, seg_len: usize },

    #[error("fold split: {0}")]
    Fold(String),

    #[error("empty training pool")]
    EmptyPool,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported checkpoint version {0:?}")]
    CheckpointVersion(String),

    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("config: {0}")]
    Config(String),

    #[error("empty input")]
    EmptyInput,

    #[error("{0} is undefined for this input")]
    Undefined(&'static str),
}

impl Error {
    /// Short machine-parsable category used on the command line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::UnknownColumn(_) => "data",
            Error::EmptyDataset | Error::VideoTooShort { .. } | Error::EmptyPool => "data",
            Error::Fold(_) => "split",
            Error::DimensionMismatch { .. } => "shape",
            Error::NonFinite(_) => "numeric",
            Error::CheckpointVersion(_) | Error::ShapeMismatch(_) | Error::Truncated(_) => {
                "checkpoint"
            }
            Error::Config(_) => "config",
            Error::EmptyInput | Error::Undefined(_) => "metric",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
