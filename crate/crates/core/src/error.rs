use std::path::PathBuf;

use thiserror::Error;

use crate::datamodel::{DatasetKind, MusicId, UploaderId, VideoId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("uploader {0} has no interaction history")]
    EmptyHistory(UploaderId),

    #[error("referential integrity: {0}")]
    Integrity(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stratum {stratum} has {size} clips, at least {required} are needed")]
    StratumTooSmall {
        stratum: usize,
        size: usize,
        required: usize,
    },

    #[error("cannot realize genre ratio: {0}")]
    Infeasible(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("expected a {expected} dataset, got {actual}")]
    KindMismatch {
        expected: DatasetKind,
        actual: DatasetKind,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("model is frozen")]
    Frozen,

    #[error("model is not frozen")]
    NotFrozen,

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite {
        epoch: usize,
        step: usize,
        detail: String,
        /// Parameters before the failing step.
        last_good: Option<Box<crate::crossmodal::CrossModalNet>>,
    },

    #[error("no ranking for test video {0}")]
    MissingRanking(VideoId),

    #[error("music clip {0} has zero popularity")]
    ZeroPopularity(MusicId),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}
