//! Traversability classification from positive-only driving data: a GAN
//! learns what drivable views look like, an inverse generator maps views to
//! latent codes, and reconstruction error separates GO from NO GO.

pub mod data;
pub mod error;
pub mod evalkit;
pub mod gan;
mod infer;
pub mod inverse;
pub mod losses;
pub mod models;
pub mod scoring;

pub use error::{CoreError, Result};
pub use infer::forward_eval;
pub use models::Scale;
