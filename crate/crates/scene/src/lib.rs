//! Synthetic stand-in for a robot's camera stream: procedural corridor
//! scenes, a grid world to drive through, and the labeling that turns
//! driving speed into training labels.

pub mod dataset;
mod error;
pub mod label;
pub mod pnm;
pub mod render;
pub mod world;

pub use error::{Result, SceneError};
pub use label::{
    augment_flip, auto_label, build_annotated_split, flip_horizontal, hand_label_negatives,
    positive_mask, AnnotatedSplit, Label, LabeledFrame, LabelingConfig,
};
pub use render::{render_scene, SceneKind, SceneParams};
pub use world::{simulate_run, Pose, RunTrace, SimOptions, View, World};
