//! Anomaly scores, the threshold decision, the supervised fusion head and
//! the saliency views of it.

use std::fmt;

use gonogo_scene::pnm::GrayImage;
use gonogo_scene::{Label, LabeledFrame};
use gonogo_tensor::{AdamConfig, AdamState, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{check_image, stack_images};
use crate::error::{CoreError, Result};
use crate::gan::{feature_f, GanModels, LOG_EPS};
use crate::inverse::{invert_feedforward, FrozenGan, InverseModel};
use crate::losses::{distance_values, Norm};
use crate::models::Scale;

/// Images scored per forward pass.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Go,
    #[serde(rename = "NOGO")]
    NoGo,
}

impl Decision {
    pub fn is_go(self) -> bool {
        self == Decision::Go
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Go => "GO",
            Decision::NoGo => "NOGO",
        })
    }
}

/// Element weights for the pixel and feature distances, each with mean 1.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMasks {
    /// `[3, H, W]`.
    pub residual: Tensor,
    /// Shape of the discriminator feature map.
    pub feature: Tensor,
}

fn band_mask(shape: [usize; 3], fraction: f64, high: f32) -> Tensor {
    let [c, h, w] = shape;
    let rows = ((h as f64 * fraction).ceil() as usize).clamp(1, h);
    let first = h - rows;
    let mut t = Tensor::from_fn(&[c, h, w], |i| if (i / w) % h >= first { high } else { 1.0 });
    let mean = t.sum_f64() / t.numel() as f64;
    let inv = (1.0 / mean) as f32;
    t.data_mut().iter_mut().for_each(|v| *v *= inv);
    t
}

impl WeightMasks {
    /// Weight `high` on the bottom `fraction` of rows, 1 elsewhere, then
    /// rescaled to mean 1.
    pub fn bottom_band(scale: Scale, fraction: f64, high: f32) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(CoreError::Config(format!("bottom fraction {fraction} outside (0, 1]")));
        }
        if !(high >= 1.0) || !high.is_finite() {
            return Err(CoreError::Config(format!("band weight {high} must be at least 1")));
        }
        Ok(Self {
            residual: band_mask(scale.image_shape(), fraction, high),
            feature: band_mask(scale.feature_shape(), fraction, high),
        })
    }

    pub fn ones(scale: Scale) -> Self {
        Self {
            residual: Tensor::ones(&scale.image_shape()),
            feature: Tensor::ones(&scale.feature_shape()),
        }
    }

    pub fn from_config(scale: Scale, cfg: &ScoringConfig) -> Result<Self> {
        Self::bottom_band(scale, cfg.bottom_fraction, cfg.band_weight)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub lambda: f32,
    /// Scores strictly below this are GO.
    pub threshold: f64,
    pub bottom_fraction: f64,
    pub band_weight: f32,
    pub norm: Norm,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            threshold: 0.17,
            bottom_fraction: 1.0 / 8.0,
            band_weight: 8.0,
            norm: Norm::Rms,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CoreError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(CoreError::Config("threshold must be positive".into()));
        }
        if !(self.bottom_fraction > 0.0 && self.bottom_fraction <= 1.0) {
            return Err(CoreError::Config("bottom fraction must lie in (0, 1]".into()));
        }
        if !(self.band_weight >= 1.0) || !self.band_weight.is_finite() {
            return Err(CoreError::Config("band weight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn decide(&self, anomaly: f64) -> Decision {
        threshold_decision(anomaly, self.threshold)
    }
}

/// GO iff `anomaly < threshold`.
pub fn threshold_decision(anomaly: f64, threshold: f64) -> Decision {
    if anomaly < threshold {
        Decision::Go
    } else {
        Decision::NoGo
    }
}

pub fn anomaly_score(residual: f64, feature: f64, lambda: f32) -> f64 {
    let l = f64::from(lambda);
    (1.0 - l) * residual + l * feature
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub residual: f64,
    pub feature: f64,
    pub anomaly: f64,
    pub decision: Decision,
    pub fc_prob: Option<f64>,
    pub fc_decision: Option<Decision>,
}

/// Scores images `[N, 3, H, W]` against the codes `z [N, z_dim]`.
pub fn score_latent(
    x: &Tensor,
    z: &Tensor,
    gan: &GanModels,
    masks: Option<&WeightMasks>,
    cfg: &ScoringConfig,
) -> Result<Vec<ScoreBreakdown>> {
    let x_rec = gan.generate(z)?;
    let (fx, f_rec) = (gan.features(x)?, gan.features(&x_rec)?);
    let residual = distance_values(x, &x_rec, masks.map(|m| &m.residual), cfg.norm)?;
    let feature = distance_values(&fx, &f_rec, masks.map(|m| &m.feature), cfg.norm)?;
    Ok(residual
        .iter()
        .zip(&feature)
        .map(|(&r, &d)| {
            let (residual, feature) = (f64::from(r), f64::from(d));
            let anomaly = anomaly_score(residual, feature, cfg.lambda);
            ScoreBreakdown {
                residual,
                feature,
                anomaly,
                decision: cfg.decide(anomaly),
                fc_prob: None,
                fc_decision: None,
            }
        })
        .collect())
}

fn check_pair(gan: &GanModels, inv: &InverseModel) -> Result<()> {
    if gan.scale != inv.scale || gan.z_dim != inv.z_dim {
        return Err(CoreError::ScaleMismatch {
            what: "inverse generator",
            expected: format!("{} with z_dim {}", gan.scale, gan.z_dim),
            actual: format!("{} with z_dim {}", inv.scale, inv.z_dim),
        });
    }
    Ok(())
}

fn check_batch(x: &Tensor, scale: Scale) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1..] != scale.image_shape() {
        return Err(CoreError::ScaleMismatch {
            what: "image batch",
            expected: format!("[N, {:?}] ({scale})", scale.image_shape()),
            actual: format!("{s:?}"),
        });
    }
    Ok(())
}

fn chunks(x: &Tensor) -> impl Iterator<Item = Tensor> + '_ {
    let n = x.shape()[0];
    (0..n).step_by(CHUNK).map(move |start| {
        let items: Vec<Tensor> = (start..(start + CHUNK).min(n)).map(|i| x.index_first(i)).collect();
        stack_images(&items)
    })
}

/// Unsupervised scores through the feed-forward inverse generator.
pub fn score(
    x: &Tensor,
    gan: &GanModels,
    inv: &InverseModel,
    masks: Option<&WeightMasks>,
    cfg: &ScoringConfig,
) -> Result<Vec<ScoreBreakdown>> {
    check_pair(gan, inv)?;
    check_batch(x, gan.scale)?;
    let mut out = Vec::with_capacity(x.shape()[0]);
    for chunk in chunks(x) {
        let z = invert_feedforward(&chunk, inv)?;
        out.extend(score_latent(&chunk, &z, gan, masks, cfg)?);
    }
    Ok(out)
}

// ----- fusion head -------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// `|X − X'|`.
    #[serde(rename = "R")]
    Residual,
    /// `|f(X) − f(X')|`.
    #[serde(rename = "D")]
    FeatureDiff,
    /// `f(X)`.
    #[serde(rename = "F")]
    Features,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Residual, Branch::FeatureDiff, Branch::Features];

    pub fn input_len(self, scale: Scale) -> usize {
        match self {
            Branch::Residual => scale.image_shape().iter().product(),
            Branch::FeatureDiff | Branch::Features => scale.feature_len(),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Branch::Residual => 'R',
            Branch::FeatureDiff => 'D',
            Branch::Features => 'F',
        }
    }

    pub fn needs_reconstruction(self) -> bool {
        self != Branch::Features
    }
}

/// Branch letters in canonical order, e.g. `"R+D+F"`.
pub fn branch_label(branches: &[Branch]) -> String {
    let mut b = branches.to_vec();
    b.sort();
    b.iter().map(|x| x.letter().to_string()).collect::<Vec<_>>().join("+")
}

/// Flattened per-branch inputs `[N, len]`.
#[derive(Clone, Debug, Default)]
pub struct BranchInputs {
    pub residual: Option<Tensor>,
    pub feature_diff: Option<Tensor>,
    pub features: Option<Tensor>,
}

impl BranchInputs {
    pub fn get(&self, b: Branch) -> Option<&Tensor> {
        match b {
            Branch::Residual => self.residual.as_ref(),
            Branch::FeatureDiff => self.feature_diff.as_ref(),
            Branch::Features => self.features.as_ref(),
        }
    }

    fn get_mut(&mut self, b: Branch) -> &mut Option<Tensor> {
        match b {
            Branch::Residual => &mut self.residual,
            Branch::FeatureDiff => &mut self.feature_diff,
            Branch::Features => &mut self.features,
        }
    }

    fn rows(&self, idx: &[usize]) -> BranchInputs {
        let pick = |t: &Option<Tensor>| {
            t.as_ref().map(|t| {
                let items: Vec<Tensor> = idx.iter().map(|&i| t.index_first(i)).collect();
                let refs: Vec<&Tensor> = items.iter().collect();
                Tensor::stack(&refs).expect("rows of one tensor")
            })
        };
        BranchInputs {
            residual: pick(&self.residual),
            feature_diff: pick(&self.feature_diff),
            features: pick(&self.features),
        }
    }
}

/// A linear scalar per active branch, then a linear layer and a sigmoid
/// over the concatenated scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct FcHead {
    pub scale: Scale,
    branches: Vec<Branch>,
    /// Per active branch `[1, len]` weight and `[1]` bias.
    pub branch_weights: Vec<(Tensor, Tensor)>,
    /// `[1, k]`.
    pub final_weight: Tensor,
    /// `[1]`.
    pub final_bias: Tensor,
}

impl FcHead {
    /// Zero-initialized head over the given branches.
    pub fn zeros(scale: Scale, branches: &[Branch]) -> Result<Self> {
        let mut b = branches.to_vec();
        b.sort();
        b.dedup();
        if b.is_empty() {
            return Err(CoreError::Config("the head needs at least one branch".into()));
        }
        let branch_weights = b
            .iter()
            .map(|br| (Tensor::zeros(&[1, br.input_len(scale)]), Tensor::zeros(&[1])))
            .collect();
        let k = b.len();
        Ok(Self {
            scale,
            branches: b,
            branch_weights,
            final_weight: Tensor::zeros(&[1, k]),
            final_bias: Tensor::zeros(&[1]),
        })
    }

    /// Branch weights `N(0, std²/len)` and final weights `N(0, 1)`.
    pub fn random(scale: Scale, branches: &[Branch], seed: u64) -> Result<Self> {
        let mut head = Self::zeros(scale, branches)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (w, _) in &mut head.branch_weights {
            let len = w.numel();
            *w = Tensor::randn(&[1, len], 1.0 / (len as f64).sqrt(), &mut rng);
        }
        let k = head.branches.len();
        head.final_weight = Tensor::randn(&[1, k], 1.0, &mut rng);
        Ok(head)
    }

    /// Starting point for training: zero branch weights and unit final
    /// weights, so no input dimension is favoured before it is fitted.
    pub fn untrained(scale: Scale, branches: &[Branch]) -> Result<Self> {
        let mut head = Self::zeros(scale, branches)?;
        head.final_weight = head.final_weight.map(|_| 1.0);
        Ok(head)
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn needs_reconstruction(&self) -> bool {
        self.branches.iter().any(|b| b.needs_reconstruction())
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (b, (w, bias)) in self.branches.iter().zip(&self.branch_weights) {
            out.push((format!("branch_{}.weight", b.letter()), w));
            out.push((format!("branch_{}.bias", b.letter()), bias));
        }
        out.push(("final.weight".into(), &self.final_weight));
        out.push(("final.bias".into(), &self.final_bias));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (b, (w, bias)) in self.branches.iter().zip(&mut self.branch_weights) {
            out.push((format!("branch_{}.weight", b.letter()), w));
            out.push((format!("branch_{}.bias", b.letter()), bias));
        }
        out.push(("final.weight".into(), &mut self.final_weight));
        out.push(("final.bias".into(), &mut self.final_bias));
        out
    }

    fn bind(&self, g: &mut Graph<f32>, trainable: bool) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|(_, t)| g.leaf(t.clone(), trainable))
            .collect()
    }

    /// Pre-sigmoid output from branch input nodes `[N, len]`.
    fn logit(&self, g: &mut Graph<f32>, params: &[Var], inputs: &[Var]) -> Result<Var> {
        let mut scalars = Vec::with_capacity(inputs.len());
        for (i, &x) in inputs.iter().enumerate() {
            scalars.push(g.linear(x, params[2 * i], params[2 * i + 1])?);
        }
        let joined = g.concat_cols(&scalars)?;
        let k = params.len();
        let out = g.linear(joined, params[k - 2], params[k - 1])?;
        let n = g.shape(out)[0];
        Ok(g.reshape(out, &[n])?)
    }

    fn input_vars(&self, g: &mut Graph<f32>, inputs: &BranchInputs) -> Result<Vec<Var>> {
        self.branches
            .iter()
            .map(|&b| {
                let t = inputs
                    .get(b)
                    .ok_or_else(|| CoreError::MissingInput(format!("branch {} input", b.letter())))?;
                let len = b.input_len(self.scale);
                if t.rank() != 2 || t.shape()[1] != len {
                    return Err(CoreError::ScaleMismatch {
                        what: "branch input",
                        expected: format!("[N, {len}]"),
                        actual: format!("{:?}", t.shape()),
                    });
                }
                Ok(g.input(t.clone()))
            })
            .collect()
    }
}

/// GO probabilities from precomputed branch inputs.
pub fn fc_forward(head: &FcHead, inputs: &BranchInputs) -> Result<Vec<f32>> {
    let mut g = Graph::<f32>::new();
    let params = head.bind(&mut g, false);
    let xs = head.input_vars(&mut g, inputs)?;
    let logit = head.logit(&mut g, &params, &xs)?;
    let prob = g.sigmoid(logit)?;
    Ok(g.value(prob).data().to_vec())
}

/// Frozen models the head reads from. The inverse generator is only needed
/// by branches that use a reconstruction.
#[derive(Clone, Copy)]
pub struct HeadModels<'a> {
    pub gan: &'a GanModels,
    pub inv: Option<&'a InverseModel>,
}

impl HeadModels<'_> {
    fn inverse(&self) -> Result<&InverseModel> {
        let inv = self
            .inv
            .ok_or_else(|| CoreError::MissingInput("the R and D branches need an inverse generator".into()))?;
        check_pair(self.gan, inv)?;
        Ok(inv)
    }
}

fn flatten(t: Tensor) -> Result<Tensor> {
    let n = t.shape()[0];
    let rest = t.numel() / n;
    Ok(t.reshape(&[n, rest])?)
}

fn abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
    Ok(Tensor::new(a.shape(), data)?)
}

/// Computes exactly the inputs the listed branches need.
pub fn branch_inputs(x: &Tensor, models: HeadModels<'_>, branches: &[Branch]) -> Result<BranchInputs> {
    check_batch(x, models.gan.scale)?;
    let mut parts: Vec<BranchInputs> = Vec::new();
    for chunk in chunks(x) {
        let mut bi = BranchInputs::default();
        let fx = if branches.iter().any(|&b| b != Branch::Residual) {
            Some(feature_f(&models.gan.dis, &chunk)?)
        } else {
            None
        };
        if branches.iter().any(|b| b.needs_reconstruction()) {
            let z = invert_feedforward(&chunk, models.inverse()?)?;
            let x_rec = models.gan.generate(&z)?;
            if branches.contains(&Branch::Residual) {
                bi.residual = Some(flatten(abs_diff(&chunk, &x_rec)?)?);
            }
            if branches.contains(&Branch::FeatureDiff) {
                let f_rec = models.gan.features(&x_rec)?;
                let fx = fx.as_ref().expect("features computed for D");
                bi.feature_diff = Some(flatten(abs_diff(fx, &f_rec)?)?);
            }
        }
        if branches.contains(&Branch::Features) {
            bi.features = Some(flatten(fx.expect("features computed for F"))?);
        }
        parts.push(bi);
    }
    let mut out = BranchInputs::default();
    for b in Branch::ALL {
        let pieces: Vec<&Tensor> = parts.iter().filter_map(|p| p.get(b)).collect();
        if pieces.is_empty() {
            continue;
        }
        let len = pieces[0].shape()[1];
        let data: Vec<f32> = pieces.iter().flat_map(|p| p.data().iter().copied()).collect();
        let n = data.len() / len;
        *out.get_mut(b) = Some(Tensor::new(&[n, len], data)?);
    }
    Ok(out)
}

pub fn decide_prob(prob: f64) -> Decision {
    if prob >= 0.5 {
        Decision::Go
    } else {
        Decision::NoGo
    }
}

/// GO probability and decision per image of `x [N, 3, H, W]`.
pub fn classify_fc(head: &FcHead, x: &Tensor, models: HeadModels<'_>) -> Result<Vec<(f64, Decision)>> {
    check_scale(head, models.gan)?;
    let inputs = branch_inputs(x, models, head.branches())?;
    Ok(fc_forward(head, &inputs)?
        .into_iter()
        .map(|p| (f64::from(p), decide_prob(f64::from(p))))
        .collect())
}

fn check_scale(head: &FcHead, gan: &GanModels) -> Result<()> {
    if head.scale != gan.scale {
        return Err(CoreError::ScaleMismatch {
            what: "fusion head",
            expected: gan.scale.to_string(),
            actual: head.scale.to_string(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcTrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FcTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl FcTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(CoreError::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return fail("head learning rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("head batch size and epoch limit must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FcHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

fn targets(frames: &[LabeledFrame]) -> Result<Vec<f32>> {
    let t: Vec<f32> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| match f.label {
            Label::Positive => Ok(1.0),
            Label::Negative => Ok(0.0),
            Label::Unlabeled => Err(CoreError::Config(format!("head training item {i} is unlabeled"))),
        })
        .collect::<Result<_>>()?;
    let positives = t.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == t.len() {
        return Err(CoreError::SingleClass {
            positives,
            negatives: t.len() - positives,
        });
    }
    Ok(t)
}

fn bce(g: &mut Graph<f32>, logit: Var, target: &[f32]) -> Result<Var> {
    let p = g.sigmoid(logit)?;
    let n = target.len();
    let t = g.input(Tensor::new(&[n], target.to_vec())?);
    let one_minus_t = g.input(Tensor::new(&[n], target.iter().map(|v| 1.0 - v).collect())?);
    let log_p = g.log_clamped(p, LOG_EPS)?;
    let q = g.scale(p, -1.0)?;
    let q = g.add_scalar(q, 1.0)?;
    let log_q = g.log_clamped(q, LOG_EPS)?;
    let a = g.mul(t, log_p)?;
    let b = g.mul(one_minus_t, log_q)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    Ok(g.scale(m, -1.0)?)
}

fn eval_bce(head: &FcHead, inputs: &BranchInputs, target: &[f32]) -> Result<f64> {
    let mut g = Graph::<f32>::new();
    let params = head.bind(&mut g, false);
    let xs = head.input_vars(&mut g, inputs)?;
    let logit = head.logit(&mut g, &params, &xs)?;
    let loss = bce(&mut g, logit, target)?;
    Ok(f64::from(g.value(loss).item()))
}

/// Fits the head on precomputed inputs with early stopping on a held-out
/// slice of the training items.
pub fn train_fc_on_inputs(
    head: FcHead,
    inputs: &BranchInputs,
    target: &[f32],
    cfg: &FcTrainConfig,
) -> Result<(FcHead, FcHistory)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = target.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_inputs = inputs.rows(val_idx);
    let val_target: Vec<f32> = val_idx.iter().map(|&i| target[i]).collect();
    let mut train_idx = train_idx.to_vec();

    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: 0.9,
        ..AdamConfig::default()
    };
    let mut head = head;
    let mut opt = AdamState::new();
    let mut best = (head.clone(), eval_bce(&head, &val_inputs, &val_target)?);
    let mut history = FcHistory::default();
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in train_idx.chunks(cfg.batch_size) {
            let batch = inputs.rows(idx);
            let t: Vec<f32> = idx.iter().map(|&i| target[i]).collect();
            let mut g = Graph::<f32>::new();
            let params = head.bind(&mut g, true);
            let xs = head.input_vars(&mut g, &batch)?;
            let logit = head.logit(&mut g, &params, &xs)?;
            let loss = bce(&mut g, logit, &t)?;
            g.backward(loss)?;
            let grads: Vec<Option<Tensor>> = params.iter().map(|&v| g.grad(v).cloned()).collect();
            opt.step(&adam, &mut head.parameters_mut(), &grads)?;
            sum += f64::from(g.value(loss).item()) * idx.len() as f64;
            count += idx.len();
        }
        let val = eval_bce(&head, &val_inputs, &val_target)?;
        history.train_loss.push(sum / count as f64);
        history.val_loss.push(val);
        if val < best.1 {
            best = (head.clone(), val);
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.0, history))
}

/// Trains a head over `branches` on labeled frames (positive = GO).
pub fn train_fc(
    frames: &[LabeledFrame],
    branches: &[Branch],
    models: HeadModels<'_>,
    cfg: &FcTrainConfig,
) -> Result<(FcHead, FcHistory)> {
    let target = targets(frames)?;
    for f in frames {
        check_image(&f.image, models.gan.scale)?;
    }
    let x = stack_images(frames.iter().map(|f| &f.image));
    let inputs = branch_inputs(&x, models, branches)?;
    let head = FcHead::untrained(models.gan.scale, branches)?;
    train_fc_on_inputs(head, &inputs, &target, cfg)
}

// ----- visualisation -----------------------------------------------------

/// `|∂prob/∂X|` of one image `[3, H, W]`, reduced by max over channels to
/// `[H, W]`.
pub fn saliency_map(head: &FcHead, models: HeadModels<'_>, x: &Tensor) -> Result<Tensor> {
    check_scale(head, models.gan)?;
    check_image(x, head.scale)?;
    let [c, h, w] = head.scale.image_shape();
    let mut g = Graph::<f32>::new();
    let frozen = FrozenGan::bind(&mut g, models.gan);
    let params = head.bind(&mut g, false);
    let xv = g.leaf(x.clone().reshape(&[1, c, h, w])?, true);
    let prob = prob_node(&mut g, head, models, &frozen, &params, xv)?;
    g.backward(prob)?;
    let grad = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(&[1, c, h, w]));
    Ok(Tensor::from_fn(&[h, w], |p| {
        (0..c).map(|ch| grad.data()[ch * h * w + p].abs()).fold(0.0, f32::max)
    }))
}

/// GO probability of a batch as a differentiable function of `x`.
fn prob_node(
    g: &mut Graph<f32>,
    head: &FcHead,
    models: HeadModels<'_>,
    frozen: &FrozenGan<'_>,
    params: &[Var],
    xv: Var,
) -> Result<Var> {
    let fx = frozen.features(g, xv)?;
    let (mut x_rec, mut f_rec) = (None, None);
    if head.needs_reconstruction() {
        let inv = models.inverse()?;
        let ib = inv.net.bind(g, false);
        let z = inv.net.forward(g, &ib, xv, gonogo_tensor::Mode::Eval, None)?.last();
        let xr = frozen.generate(g, z)?;
        f_rec = Some(frozen.features(g, xr)?);
        x_rec = Some(xr);
    }
    let mut inputs = Vec::new();
    for &b in head.branches() {
        let v = match b {
            Branch::Residual => {
                let d = g.sub(xv, x_rec.expect("reconstruction"))?;
                g.abs(d)?
            }
            Branch::FeatureDiff => {
                let d = g.sub(fx, f_rec.expect("reconstruction features"))?;
                g.abs(d)?
            }
            Branch::Features => fx,
        };
        inputs.push(g.flatten(v)?);
    }
    let logit = head.logit(g, params, &inputs)?;
    let p = g.sigmoid(logit)?;
    Ok(g.sum(p)?)
}

/// Mean of [`saliency_map`] over images.
pub fn mean_saliency<'a>(
    head: &FcHead,
    models: HeadModels<'_>,
    images: impl IntoIterator<Item = &'a Tensor>,
) -> Result<Tensor> {
    let [_, h, w] = head.scale.image_shape();
    let mut acc = vec![0.0f64; h * w];
    let mut n = 0usize;
    for x in images {
        let s = saliency_map(head, models, x)?;
        acc.iter_mut().zip(s.data()).for_each(|(a, &v)| *a += f64::from(v));
        n += 1;
    }
    if n == 0 {
        return Err(CoreError::EmptyDataset);
    }
    Ok(Tensor::new(&[h, w], acc.iter().map(|&v| (v / n as f64) as f32).collect())?)
}

/// Min-max normalizes a map to bytes; a constant map becomes mid-gray.
pub fn to_gray(map: &Tensor) -> GrayImage {
    let [h, w] = [map.shape()[0], map.shape()[1]];
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let pixels = map
        .data()
        .iter()
        .map(|&v| {
            let unit = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            gonogo_scene::pnm::to_byte(unit)
        })
        .collect();
    GrayImage {
        width: w,
        height: h,
        pixels,
    }
}

/// The R-branch weights as an image: channel max, then min-max normalized.
pub fn residual_weight_image(head: &FcHead) -> Result<GrayImage> {
    let pos = head
        .branches()
        .iter()
        .position(|&b| b == Branch::Residual)
        .ok_or_else(|| CoreError::MissingInput("the head has no R branch".into()))?;
    let [c, h, w] = head.scale.image_shape();
    let weights = head.branch_weights[pos].0.data();
    let map = Tensor::from_fn(&[h, w], |p| {
        (0..c).map(|ch| weights[ch * h * w + p]).fold(f32::NEG_INFINITY, f32::max)
    });
    Ok(to_gray(&map))
}
