//! Adversarial training of the generator and discriminator on positive
//! images only.

use gonogo_scene::LabeledFrame;
use gonogo_tensor::{AdamConfig, AdamState, Graph, Mode, Network, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, require_positive, stack_images};
use crate::error::{CoreError, Result};
use crate::infer::forward_eval;
use crate::models::{build_discriminator, build_generator, feature_layer, Scale};

/// Clamp applied inside every log.
pub const LOG_EPS: f32 = 1e-7;
/// Column of the discriminator softmax holding the "real" probability.
pub const REAL: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorObjective {
    /// Minimize `−log D(G(z))`.
    NonSaturating,
    /// Minimize `log(1 − D(G(z)))` as in the min-max game.
    Minimax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub scale: Scale,
    pub z_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub objective: GeneratorObjective,
    /// Target for real images in the discriminator loss, if smoothed.
    pub real_label: Option<f32>,
    /// Abort when a loss exceeds this value.
    pub divergence_limit: f32,
}

impl GanConfig {
    pub fn new(scale: Scale) -> Self {
        Self {
            scale,
            z_dim: scale.default_z_dim(),
            batch_size: 100,
            epochs: match scale {
                Scale::Desk => 30,
                Scale::Full => 50,
            },
            adam: AdamConfig::default(),
            seed: 0,
            objective: GeneratorObjective::NonSaturating,
            real_label: None,
            divergence_limit: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.z_dim == 0 {
            return fail("z_dim must be at least 1");
        }
        if self.batch_size < 2 {
            return fail("batch size must be at least 2 for batch norm");
        }
        if let Some(t) = self.real_label {
            if !(0.5..=1.0).contains(&t) {
                return fail("real label target must lie in [0.5, 1]");
            }
        }
        if !(self.divergence_limit > 0.0) {
            return fail("divergence limit must be positive");
        }
        self.adam.validate().map_err(|e| CoreError::Config(e.to_string()))
    }
}

impl Default for GanConfig {
    fn default() -> Self {
        Self::new(Scale::Desk)
    }
}

#[derive(Clone, Debug)]
pub struct GanModels {
    pub scale: Scale,
    pub z_dim: usize,
    pub gen: Network,
    pub dis: Network,
}

impl GanModels {
    pub fn new(scale: Scale, z_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = build_generator(scale, z_dim)?;
        let mut dis = build_discriminator(scale)?;
        gen.init(&mut rng);
        dis.init(&mut rng);
        Ok(Self { scale, z_dim, gen, dis })
    }

    /// Images for latent codes `z [N, z_dim]`.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        forward_eval(&self.gen, z, None)
    }

    /// Class probabilities `[N, 2]`.
    pub fn discriminate(&self, x: &Tensor) -> Result<Tensor> {
        forward_eval(&self.dis, x, None)
    }

    /// Activation of the last convolutional stage.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        feature_f(&self.dis, x)
    }
}

pub fn feature_f(dis: &Network, x: &Tensor) -> Result<Tensor> {
    forward_eval(dis, x, Some(feature_layer(dis)))
}

/// Losses evaluated from discriminator "real" probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLosses {
    pub d_loss: f64,
    pub g_loss: f64,
    /// Value of the min-max objective; always `−d_loss`.
    pub value: f64,
}

fn clamped_ln(p: f64) -> f64 {
    p.max(f64::from(LOG_EPS)).ln()
}

/// Batch-mean losses from `D(X)` and `D(G(z))` as plain numbers.
pub fn gan_loss(dis_real: &[f32], dis_fake: &[f32], objective: GeneratorObjective) -> GanLosses {
    let mean = |v: &[f32], f: &dyn Fn(f64) -> f64| v.iter().map(|&p| f(f64::from(p))).sum::<f64>() / v.len() as f64;
    let value = mean(dis_real, &clamped_ln) + mean(dis_fake, &|p| clamped_ln(1.0 - p));
    let g_loss = match objective {
        GeneratorObjective::NonSaturating => -mean(dis_fake, &clamped_ln),
        GeneratorObjective::Minimax => mean(dis_fake, &|p| clamped_ln(1.0 - p)),
    };
    GanLosses {
        d_loss: -value,
        g_loss,
        value,
    }
}

/// `−mean(target·log p_real + (1 − target)·log p_fake)` over a batch of
/// softmax rows.
fn bce_on_probs(g: &mut Graph<f32>, probs: Var, target: f32) -> Result<Var> {
    let real = g.select_col(probs, REAL)?;
    let lr = g.log_clamped(real, LOG_EPS)?;
    let mut total = g.mean(lr)?;
    total = g.scale(total, -target)?;
    if target < 1.0 {
        let fake = g.select_col(probs, 1 - REAL)?;
        let lf = g.log_clamped(fake, LOG_EPS)?;
        let mf = g.mean(lf)?;
        let mf = g.scale(mf, -(1.0 - target))?;
        total = g.add(total, mf)?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub epochs: Vec<EpochRecord>,
    /// `(d_loss, g_loss)` of every step.
    pub steps: Vec<(f32, f32)>,
}

fn grads_of(g: &Graph<f32>, vars: &[Var]) -> Vec<Option<Tensor>> {
    vars.iter().map(|&v| g.grad(v).cloned()).collect()
}

fn sample_z(rng: &mut ChaCha8Rng, n: usize, z_dim: usize) -> Tensor {
    Tensor::randn(&[n, z_dim], 1.0, rng)
}

/// Alternating discriminator and generator updates, one pair per batch.
pub fn train_gan(frames: &[LabeledFrame], cfg: &GanConfig) -> Result<(GanModels, GanHistory)> {
    cfg.validate()?;
    require_positive(frames, cfg.scale)?;
    let mut models = GanModels::new(cfg.scale, cfg.z_dim, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut d_opt = AdamState::new();
    let mut g_opt = AdamState::new();
    let mut history = GanHistory::default();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let target = cfg.real_label.unwrap_or(1.0);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut d_sum, mut g_sum, mut count) = (0.0, 0.0, 0usize);
        for (step, idx) in batches(&order, cfg.batch_size).enumerate() {
            let n = idx.len();
            let real = stack_images(idx.iter().map(|&i| &frames[i].image));

            // Discriminator update; the generator is a constant here.
            let d_loss = {
                let mut g = Graph::<f32>::new();
                let gp = models.gen.bind(&mut g, false);
                let dp = models.dis.bind(&mut g, true);
                let z = g.input(sample_z(&mut rng, n, cfg.z_dim));
                let fake = models.gen.forward(&mut g, &gp, z, Mode::Train, None)?.last();
                let xr = g.input(real);
                let real_acts = models.dis.forward(&mut g, &dp, xr, Mode::Train, None)?;
                let pr = real_acts.last();
                let pf = models.dis.forward(&mut g, &dp, fake, Mode::Train, None)?.last();
                let lr = bce_on_probs(&mut g, pr, target)?;
                let lf = bce_on_probs(&mut g, pf, 0.0)?;
                let loss = g.add(lr, lf)?;
                g.backward(loss)?;
                let grads = grads_of(&g, dp.vars());
                d_opt.step(&cfg.adam, &mut models.dis.parameters_mut(), &grads)?;
                models.dis.absorb_batch_stats(&g, &real_acts);
                g.value(loss).item()
            };

            // Generator update through a constant discriminator.
            let g_loss = {
                let mut g = Graph::<f32>::new();
                let gp = models.gen.bind(&mut g, true);
                let dp = models.dis.bind(&mut g, false);
                let z = g.input(sample_z(&mut rng, n, cfg.z_dim));
                let gen_acts = models.gen.forward(&mut g, &gp, z, Mode::Train, None)?;
                let pf = models.dis.forward(&mut g, &dp, gen_acts.last(), Mode::Train, None)?.last();
                let loss = match cfg.objective {
                    GeneratorObjective::NonSaturating => bce_on_probs(&mut g, pf, 1.0)?,
                    GeneratorObjective::Minimax => {
                        let l = bce_on_probs(&mut g, pf, 0.0)?;
                        g.neg(l)?
                    }
                };
                g.backward(loss)?;
                let grads = grads_of(&g, gp.vars());
                g_opt.step(&cfg.adam, &mut models.gen.parameters_mut(), &grads)?;
                models.gen.absorb_batch_stats(&g, &gen_acts);
                g.value(loss).item()
            };

            for (name, v) in [("d_loss", d_loss), ("g_loss", g_loss)] {
                if !v.is_finite() || v.abs() > cfg.divergence_limit {
                    return Err(CoreError::Diverged {
                        epoch,
                        step,
                        detail: format!("{name} = {v}"),
                    });
                }
            }
            history.steps.push((d_loss, g_loss));
            d_sum += f64::from(d_loss);
            g_sum += f64::from(g_loss);
            count += 1;
        }
        history.epochs.push(EpochRecord {
            epoch,
            d_loss: d_sum / count.max(1) as f64,
            g_loss: g_sum / count.max(1) as f64,
        });
    }
    Ok((models, history))
}
