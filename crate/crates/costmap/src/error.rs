use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostmapError {
    #[error("invalid map parameters: {0}")]
    InvalidParams(String),

    #[error("cell ({x}, {y}) lies outside the {width}×{height} map")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Scene(#[from] gonogo_scene::SceneError),

    #[error(transparent)]
    Core(#[from] gonogo_core::CoreError),
}

pub type Result<T, E = CostmapError> = std::result::Result<T, E>;
