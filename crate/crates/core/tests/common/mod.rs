#![allow(dead_code)]

use gonogo_core::gan::GanModels;
use gonogo_core::inverse::InverseModel;
use gonogo_core::Scale;
use gonogo_scene::{render_scene, Label, LabeledFrame, SceneKind, SceneParams};
use gonogo_tensor::Tensor;

pub fn frame(seed: u64, kind: SceneKind, label: Label) -> LabeledFrame {
    let params = SceneParams::new(seed, 32, kind);
    let (image, _) = render_scene(&params).unwrap();
    LabeledFrame {
        image,
        label,
        trace_id: 0,
        index: seed as u32,
        flipped: false,
    }
}

pub fn positives(n: usize) -> Vec<LabeledFrame> {
    (0..n as u64).map(|s| frame(s, SceneKind::Corridor, Label::Positive)).collect()
}

pub fn negatives(n: usize) -> Vec<LabeledFrame> {
    (0..n as u64)
        .map(|s| {
            let kind = if s % 2 == 0 { SceneKind::Obstacle } else { SceneKind::Edge };
            frame(1000 + s, kind, Label::Negative)
        })
        .collect()
}

pub fn batch(frames: &[LabeledFrame]) -> Tensor {
    let refs: Vec<&Tensor> = frames.iter().map(|f| &f.image).collect();
    Tensor::stack(&refs).unwrap()
}

pub fn desk_models(seed: u64) -> (GanModels, InverseModel) {
    let gan = GanModels::new(Scale::Desk, Scale::Desk.default_z_dim(), seed).unwrap();
    let inv = InverseModel::new(Scale::Desk, gan.z_dim, seed + 1).unwrap();
    (gan, inv)
}
