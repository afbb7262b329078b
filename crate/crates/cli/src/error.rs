use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("missing {what} at {path}; run `{hint}` first")]
    MissingInput {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },

    #[error("{path}: checkpoint was made for {found}, the config asks for {expected} (use --force to load anyway)")]
    Mismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] gonogo_core::CoreError),

    #[error(transparent)]
    Scene(#[from] gonogo_scene::SceneError),

    #[error(transparent)]
    Costmap(#[from] gonogo_costmap::CostmapError),

    #[error(transparent)]
    Tensor(#[from] gonogo_tensor::TensorError),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::MissingInput { .. } => 3,
            CliError::Mismatch { .. } => 4,
            CliError::Core(gonogo_core::CoreError::ScaleMismatch { .. }) => 4,
            _ => 1,
        }
    }
}

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
