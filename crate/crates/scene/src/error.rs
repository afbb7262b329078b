use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: malformed image: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}:{line}: bad manifest record: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("not enough labeled data: need {need_pos} positives and {need_neg} negatives, have {have_pos} and {have_neg}")]
    InsufficientCorpus {
        need_pos: usize,
        need_neg: usize,
        have_pos: usize,
        have_neg: usize,
    },
}

pub type Result<T, E = SceneError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}
