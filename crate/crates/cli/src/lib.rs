//! Staged command-line pipeline: configuration, checkpoints and the stage
//! functions the `gonogo` binary dispatches to.

pub mod checkpoint;
pub mod config;
mod error;
pub mod pipeline;

pub use config::Config;
pub use error::{CliError, Result};
