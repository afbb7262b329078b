//! Mapping images back to latent codes: a trained feed-forward inverse
//! generator and the per-image iterative search it replaces.

use gonogo_scene::LabeledFrame;
use gonogo_tensor::{AdamConfig, AdamState, Graph, Mode, Network, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, check_image, require_positive, stack_images};
use crate::error::{CoreError, Result};
use crate::gan::{feature_f, GanModels};
use crate::infer::forward_eval;
use crate::losses::{blend, distance, Norm};
use crate::models::{build_inverse, feature_layer, Scale};
use crate::scoring::WeightMasks;

#[derive(Clone, Debug, PartialEq)]
pub struct InversionConfig {
    /// Weight of the feature term against the pixel term.
    pub lambda: f32,
    pub norm: Norm,
    /// Steps of the iterative search.
    pub iterations: usize,
    /// Adam step size of the iterative search.
    pub search_lr: f32,
    /// Seed of the standard-normal starting code of the iterative search.
    pub init_seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            norm: Norm::Rms,
            iterations: 500,
            search_lr: 0.05,
            init_seed: 0,
            batch_size: 100,
            epochs: 30,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CoreError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.search_lr > 0.0) {
            return Err(CoreError::Config("search step size must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(CoreError::Config("batch size must be at least 2 for batch norm".into()));
        }
        self.adam.validate().map_err(|e| CoreError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct InverseModel {
    pub scale: Scale,
    pub z_dim: usize,
    pub net: Network,
}

impl InverseModel {
    pub fn new(scale: Scale, z_dim: usize, seed: u64) -> Result<Self> {
        let mut net = build_inverse(scale, z_dim)?;
        net.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { scale, z_dim, net })
    }
}

/// Latent codes `[N, z_dim]` for images `[N, 3, H, W]` in one forward pass.
pub fn invert_feedforward(x: &Tensor, inv: &InverseModel) -> Result<Tensor> {
    forward_eval(&inv.net, x, None)
}

/// Frozen generator and feature extractor placed on a graph.
pub(crate) struct FrozenGan<'a> {
    gan: &'a GanModels,
    gen: gonogo_tensor::Bound,
    dis: gonogo_tensor::Bound,
    tap: usize,
}

impl<'a> FrozenGan<'a> {
    pub(crate) fn bind(g: &mut Graph<f32>, gan: &'a GanModels) -> Self {
        Self {
            gan,
            gen: gan.gen.bind(g, false),
            dis: gan.dis.bind(g, false),
            tap: feature_layer(&gan.dis),
        }
    }

    pub(crate) fn generate(&self, g: &mut Graph<f32>, z: Var) -> Result<Var> {
        Ok(self.gan.gen.forward(g, &self.gen, z, Mode::Eval, None)?.last())
    }

    pub(crate) fn features(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        Ok(self.gan.dis.forward(g, &self.dis, x, Mode::Eval, Some(self.tap))?.last())
    }
}

/// Per-sample pixel and feature terms and their blend.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LossNodes {
    pub residual: Var,
    pub feature: Var,
    pub total: Var,
}

/// Builds the inversion loss of images `x` against codes `z`. `fx` holds
/// precomputed features of `x`.
pub(crate) fn loss_nodes(
    g: &mut Graph<f32>,
    frozen: &FrozenGan<'_>,
    x: Var,
    fx: Var,
    z: Var,
    masks: Option<&WeightMasks>,
    lambda: f32,
    norm: Norm,
) -> Result<LossNodes> {
    let x_rec = frozen.generate(g, z)?;
    let f_rec = frozen.features(g, x_rec)?;
    let residual = distance(g, x, x_rec, masks.map(|m| &m.residual), norm)?;
    let feature = distance(g, fx, f_rec, masks.map(|m| &m.feature), norm)?;
    let total = blend(g, residual, feature, lambda)?;
    Ok(LossNodes {
        residual,
        feature,
        total,
    })
}

/// Per-sample loss terms as numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    pub residual: Vec<f32>,
    pub feature: Vec<f32>,
    pub total: Vec<f32>,
}

/// The inversion objective for images `x [N, 3, H, W]` and codes `z [N, z_dim]`.
pub fn combined_loss(
    x: &Tensor,
    z: &Tensor,
    gan: &GanModels,
    cfg: &InversionConfig,
    masks: Option<&WeightMasks>,
) -> Result<CombinedLoss> {
    let fx = feature_f(&gan.dis, x)?;
    let mut g = Graph::<f32>::new();
    let frozen = FrozenGan::bind(&mut g, gan);
    let (xv, fv, zv) = (g.input(x.clone()), g.input(fx), g.input(z.clone()));
    let n = loss_nodes(&mut g, &frozen, xv, fv, zv, masks, cfg.lambda, cfg.norm)?;
    Ok(CombinedLoss {
        residual: g.value(n.residual).data().to_vec(),
        feature: g.value(n.feature).data().to_vec(),
        total: g.value(n.total).data().to_vec(),
    })
}

#[derive(Clone, Debug)]
pub struct IterativeResult {
    /// Code with the lowest loss seen, `[1, z_dim]`.
    pub z: Tensor,
    pub best_loss: f32,
    /// Loss of each visited code, the starting code first.
    pub curve: Vec<f32>,
}

/// Starting code of the iterative search.
pub fn initial_code(z_dim: usize, seed: u64) -> Tensor {
    Tensor::randn(&[1, z_dim], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Gradient descent (Adam) on the code of a single image `x [3, H, W]`.
pub fn invert_iterative(
    x: &Tensor,
    gan: &GanModels,
    cfg: &InversionConfig,
    masks: Option<&WeightMasks>,
) -> Result<IterativeResult> {
    check_image(x, gan.scale)?;
    let side = gan.scale.image_side();
    let xb = x.clone().reshape(&[1, 3, side, side])?;
    let fx = feature_f(&gan.dis, &xb)?;
    let adam = AdamConfig {
        lr: cfg.search_lr,
        ..cfg.adam
    };
    let mut z = initial_code(gan.z_dim, cfg.init_seed);
    let mut state = AdamState::new();
    let mut best = (z.clone(), f32::INFINITY);
    let mut curve = Vec::with_capacity(cfg.iterations + 1);
    for step in 0..=cfg.iterations {
        let last = step == cfg.iterations;
        let mut g = Graph::<f32>::new();
        let frozen = FrozenGan::bind(&mut g, gan);
        let (xv, fv) = (g.input(xb.clone()), g.input(fx.clone()));
        let zv = g.leaf(z.clone(), !last);
        let nodes = loss_nodes(&mut g, &frozen, xv, fv, zv, masks, cfg.lambda, cfg.norm)?;
        let loss = g.value(nodes.total).item();
        curve.push(loss);
        if loss < best.1 {
            best = (z.clone(), loss);
        }
        if last {
            break;
        }
        g.backward(nodes.total)?;
        let grad = g.grad(zv).cloned();
        state.step(&adam, &mut [("z".into(), &mut z)], &[grad])?;
    }
    Ok(IterativeResult {
        z: best.0,
        best_loss: best.1,
        curve,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseEpoch {
    pub epoch: usize,
    pub loss: f64,
}

/// Trains the inverse generator against a frozen GAN on positives only.
pub fn train_inverse_generator(
    frames: &[LabeledFrame],
    gan: &GanModels,
    cfg: &InversionConfig,
) -> Result<(InverseModel, Vec<InverseEpoch>)> {
    cfg.validate()?;
    require_positive(frames, gan.scale)?;
    let mut inv = InverseModel::new(gan.scale, gan.z_dim, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let images: Vec<&Tensor> = frames.iter().map(|f| &f.image).collect();
    let features: Vec<Tensor> = images
        .chunks(256)
        .map(|chunk| feature_f(&gan.dis, &stack_images(chunk.iter().copied())))
        .collect::<Result<_>>()?;
    let flen = gan.scale.feature_len();
    let feature_of = |i: usize| -> &[f32] {
        let t = &features[i / 256];
        &t.data()[(i % 256) * flen..(i % 256 + 1) * flen]
    };
    let fshape = gan.scale.feature_shape();
    let mut opt = AdamState::new();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in batches(&order, cfg.batch_size) {
            let x = stack_images(idx.iter().map(|&i| images[i]));
            let fx: Vec<f32> = idx.iter().flat_map(|&i| feature_of(i).iter().copied()).collect();
            let fx = Tensor::new(&[idx.len(), fshape[0], fshape[1], fshape[2]], fx)?;
            let mut g = Graph::<f32>::new();
            let frozen = FrozenGan::bind(&mut g, gan);
            let ip = inv.net.bind(&mut g, true);
            let (xv, fv) = (g.input(x), g.input(fx));
            let acts = inv.net.forward(&mut g, &ip, xv, Mode::Train, None)?;
            let nodes = loss_nodes(&mut g, &frozen, xv, fv, acts.last(), None, cfg.lambda, cfg.norm)?;
            let loss = g.mean(nodes.total)?;
            g.backward(loss)?;
            let grads: Vec<Option<Tensor>> = ip.vars().iter().map(|&v| g.grad(v).cloned()).collect();
            opt.step(&cfg.adam, &mut inv.net.parameters_mut(), &grads)?;
            inv.net.absorb_batch_stats(&g, &acts);
            sum += f64::from(g.value(loss).item());
            count += 1;
        }
        history.push(InverseEpoch {
            epoch,
            loss: sum / count.max(1) as f64,
        });
    }
    Ok((inv, history))
}
