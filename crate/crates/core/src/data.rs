//! Batching helpers over labeled frames.

use gonogo_scene::{Label, LabeledFrame};
use gonogo_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::models::Scale;

/// Fails unless every frame is a positive example of the right size.
pub fn require_positive(frames: &[LabeledFrame], scale: Scale) -> Result<()> {
    if frames.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    for (index, f) in frames.iter().enumerate() {
        if f.label != Label::Positive {
            return Err(CoreError::NonPositiveLabel {
                index,
                label: f.label.to_string(),
            });
        }
        check_image(&f.image, scale)?;
    }
    Ok(())
}

pub fn check_image(img: &Tensor, scale: Scale) -> Result<()> {
    if img.shape() != scale.image_shape() {
        return Err(CoreError::ScaleMismatch {
            what: "image",
            expected: format!("{:?} ({scale})", scale.image_shape()),
            actual: format!("{:?}", img.shape()),
        });
    }
    Ok(())
}

/// Stacks the selected images into `[N, C, H, W]`.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Tensor {
    let refs: Vec<&Tensor> = images.into_iter().collect();
    Tensor::stack(&refs).expect("batch of equally shaped images")
}

/// Index batches of at most `size`, dropping a trailing batch smaller than
/// two (batch norm cannot normalize a single sample).
pub fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size).filter(|b| b.len() >= 2)
}
