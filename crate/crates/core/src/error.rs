use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("channel count {channels} is not divisible by depth split {depth_split}")]
    Divisibility { channels: usize, depth_split: usize },

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),

    #[error("malformed manifest for sequence {sequence}: {reason}")]
    MalformedManifest { sequence: String, reason: String },

    #[error("dataset contains no usable sequence")]
    EmptyDataset,

    #[error("unknown task {0:?}")]
    UnknownTask(String),

    #[error("episode already finished; call reset first")]
    EpisodeFinished,

    #[error("replay buffer holds {size} transitions, {requested} requested")]
    Underfull { size: usize, requested: usize },

    #[error("config error for key {key:?}: {reason}")]
    Config { key: String, reason: String },

    #[error("malformed CSV {source_name} at line {line}: {reason}")]
    MalformedCsv {
        source_name: String,
        line: usize,
        reason: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image decode error in {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
