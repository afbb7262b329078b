//! Dense tensors, a reverse-mode autodiff graph, and the convolutional
//! building blocks used by the traversability networks.

pub mod adam;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod memory;
pub mod nn;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use graph::{BatchNormMode, BatchStats, CustomBackward, Graph, Var};
pub use nn::{Activation, Activations, Bound, Layer, LayerKind, LayerSpec, Mode, Network};
pub use scalar::Scalar;
pub use tensor::Tensor;
