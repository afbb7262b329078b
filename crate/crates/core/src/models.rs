//! Network tables for the generator, discriminator and inverse generator.

use std::fmt;
use std::str::FromStr;

use gonogo_tensor::nn::Activation::{Elu, Linear, Relu, Softmax};
use gonogo_tensor::{LayerSpec, Network, Result as TensorResult};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 3×32×32 images, three stride-2 stages.
    Desk,
    /// 3×128×128 images, four stride-2 stages.
    Full,
}

impl Scale {
    pub fn image_side(self) -> usize {
        match self {
            Scale::Desk => 32,
            Scale::Full => 128,
        }
    }

    pub fn image_shape(self) -> [usize; 3] {
        let s = self.image_side();
        [3, s, s]
    }

    pub fn default_z_dim(self) -> usize {
        match self {
            Scale::Desk => 32,
            Scale::Full => 100,
        }
    }

    /// Channel widths of the convolutional stages, shallowest first.
    fn widths(self) -> &'static [usize] {
        match self {
            Scale::Desk => &[32, 64, 128],
            Scale::Full => &[64, 128, 256, 512],
        }
    }

    /// Shape of the discriminator feature map.
    pub fn feature_shape(self) -> [usize; 3] {
        let w = self.widths();
        let side = self.image_side() >> w.len();
        [w[w.len() - 1], side, side]
    }

    pub fn feature_len(self) -> usize {
        self.feature_shape().iter().product()
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        })
    }
}

impl FromStr for Scale {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, CoreError> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(CoreError::UnknownScale(other.to_string())),
        }
    }
}

/// FC to the deepest feature map, then stride-2 deconvs up to the image.
/// Batch norm follows the FC and every deconv but the last.
pub fn generator_specs(scale: Scale, z_dim: usize) -> Vec<LayerSpec> {
    let widths = scale.widths();
    let depth = widths.len();
    let mut side = scale.image_side() >> depth;
    let top = [widths[depth - 1], side, side];
    let mut specs = vec![
        LayerSpec::fully_connected("fc1", z_dim, top, Linear),
        LayerSpec::batch_norm("bn1", top, Linear),
    ];
    let mut cin = widths[depth - 1];
    for stage in 0..depth {
        side *= 2;
        let idx = stage + 2;
        if stage + 1 == depth {
            specs.push(LayerSpec::deconv(&format!("dconv{idx}"), cin, 3, side, Relu));
        } else {
            let cout = widths[depth - 2 - stage];
            specs.push(LayerSpec::deconv(&format!("dconv{idx}"), cin, cout, side, Linear));
            specs.push(LayerSpec::batch_norm(&format!("bn{idx}"), [cout, side, side], Relu));
            cin = cout;
        }
    }
    specs
}

/// The shared convolutional body of the discriminator and inverse generator.
fn conv_body(scale: Scale) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut cin = 3;
    let mut side = scale.image_side();
    for (i, &cout) in scale.widths().iter().enumerate() {
        side /= 2;
        let idx = i + 1;
        specs.push(LayerSpec::conv(&format!("conv{idx}"), cin, cout, side, Linear));
        specs.push(LayerSpec::batch_norm(&format!("bn{idx}"), [cout, side, side], Elu));
        cin = cout;
    }
    specs
}

pub fn discriminator_specs(scale: Scale) -> Vec<LayerSpec> {
    let mut specs = conv_body(scale);
    let fc = format!("fc{}", scale.widths().len() + 1);
    specs.push(LayerSpec::fully_connected(&fc, scale.feature_len(), [2, 1, 1], Softmax));
    specs
}

pub fn inverse_specs(scale: Scale, z_dim: usize) -> Vec<LayerSpec> {
    let mut specs = conv_body(scale);
    let fc = format!("fc{}", scale.widths().len() + 1);
    specs.push(LayerSpec::fully_connected(&fc, scale.feature_len(), [z_dim, 1, 1], Linear));
    specs
}

pub fn build_generator(scale: Scale, z_dim: usize) -> TensorResult<Network> {
    Network::new([z_dim, 1, 1], generator_specs(scale, z_dim))
}

pub fn build_discriminator(scale: Scale) -> TensorResult<Network> {
    Network::new(scale.image_shape(), discriminator_specs(scale))
}

pub fn build_inverse(scale: Scale, z_dim: usize) -> TensorResult<Network> {
    Network::new(scale.image_shape(), inverse_specs(scale, z_dim))
}

/// Index of the layer whose output is the discriminator feature map.
pub fn feature_layer(dis: &Network) -> usize {
    dis.layers().len() - 2
}
