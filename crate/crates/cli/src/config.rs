//! TOML configuration: one section per stage, unknown keys rejected, every
//! value checked against the owning module before use.

use std::path::Path;

use gonogo_core::gan::{GanConfig, GeneratorObjective};
use gonogo_core::inverse::InversionConfig;
use gonogo_core::losses::Norm;
use gonogo_core::scoring::{Branch, FcTrainConfig, ScoringConfig};
use gonogo_core::Scale;
use gonogo_scene::world::derive_seed;
use gonogo_scene::LabelingConfig;
use gonogo_tensor::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub scale: Scale,
    pub seed: u64,
    pub data: DataSection,
    pub labeling: LabelingConfig,
    pub gan: GanSection,
    pub inversion: InversionSection,
    pub scoring: ScoringSection,
    pub fc: FcSection,
    pub eval: EvalSection,
    pub costmap: CostmapSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            scale: Scale::Desk,
            seed: 7,
            data: DataSection::default(),
            labeling: LabelingConfig::default(),
            gan: GanSection::default(),
            inversion: InversionSection::default(),
            scoring: ScoringSection::default(),
            fc: FcSection::default(),
            eval: EvalSection::default(),
            costmap: CostmapSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Auto-labeled positives for GAN and inverse training.
    pub train_positives: usize,
    /// Labeled items per class for calibration and head training; the test
    /// split gets as many again.
    pub labeled_positives: usize,
    pub labeled_negatives: usize,
    pub world_length: usize,
    pub hazard_density: f64,
    pub steps_per_world: usize,
    pub noise: f32,
    pub augment_flip: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_positives: 2000,
            labeled_positives: 400,
            labeled_negatives: 400,
            world_length: 40,
            hazard_density: 0.12,
            steps_per_world: 150,
            noise: 0.03,
            augment_flip: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanSection {
    /// Latent width; the scale's default when absent.
    pub z_dim: Option<usize>,
    pub batch_size: usize,
    /// The scale's default when absent.
    pub epochs: Option<usize>,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub objective: GeneratorObjective,
    pub real_label: Option<f32>,
    pub divergence_limit: f32,
}

impl Default for GanSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            z_dim: None,
            batch_size: 64,
            epochs: None,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            objective: GeneratorObjective::NonSaturating,
            real_label: Some(0.9),
            divergence_limit: 50.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionSection {
    pub lambda: f32,
    pub norm: Norm,
    pub iterations: usize,
    pub search_lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f32,
    pub beta1: f32,
}

impl Default for InversionSection {
    fn default() -> Self {
        let d = InversionConfig::default();
        Self {
            lambda: d.lambda,
            norm: d.norm,
            iterations: d.iterations,
            search_lr: d.search_lr,
            batch_size: 64,
            epochs: 10,
            lr: d.adam.lr,
            beta1: d.adam.beta1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    pub lambda: f32,
    pub threshold: f64,
    /// Replace `threshold` by the F1-best value on the labeled split.
    pub calibrate: bool,
    pub bottom_fraction: f64,
    pub band_weight: f32,
    pub norm: Norm,
}

impl Default for ScoringSection {
    fn default() -> Self {
        let d = ScoringConfig::default();
        Self {
            lambda: d.lambda,
            threshold: d.threshold,
            calibrate: true,
            bottom_fraction: d.bottom_fraction,
            band_weight: d.band_weight,
            norm: d.norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcSection {
    pub branches: Vec<Branch>,
    pub lr: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for FcSection {
    fn default() -> Self {
        let d = FcTrainConfig::default();
        Self {
            branches: Branch::ALL.to_vec(),
            lr: d.lr,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            patience: d.patience,
            validation_fraction: d.validation_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Items per class scored by the iterative baseline.
    pub baseline_per_class: usize,
    pub bench_images: usize,
    pub bench_repetitions: usize,
    /// Images timed by `bench` for the two inversion routes.
    pub speed_images: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            baseline_per_class: 20,
            bench_images: 32,
            bench_repetitions: 5,
            speed_images: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostmapSection {
    pub world_length: usize,
    /// Corridor cell of the single obstacle in the middle lane.
    pub obstacle_x: usize,
    pub goal_x: usize,
    pub inflation_radius: f64,
    pub mark_range: f64,
    pub lethal_cutoff: u8,
    pub cost_weight: f64,
    pub max_steps: usize,
}

impl Default for CostmapSection {
    fn default() -> Self {
        Self {
            world_length: 24,
            obstacle_x: 10,
            goal_x: 20,
            inflation_radius: 1.5,
            mark_range: 1.0,
            lethal_cutoff: 200,
            cost_weight: 1.0,
            max_steps: 200,
        }
    }
}

/// Independent seed streams derived from the top-level seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    TrainWorlds = 1,
    PoolWorlds = 2,
    Split = 3,
    Gan = 4,
    Inverse = 5,
    Head = 6,
    Mission = 7,
}

impl Config {
    pub fn seed_for(&self, stream: Stream) -> u64 {
        derive_seed(self.seed, stream as u64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let cfg: Config = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate().map_err(|reason| CliError::Config {
            path: path.to_path_buf(),
            reason,
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn z_dim(&self) -> usize {
        self.gan.z_dim.unwrap_or(self.scale.default_z_dim())
    }

    pub fn gan_config(&self) -> GanConfig {
        let base = GanConfig::new(self.scale);
        GanConfig {
            scale: self.scale,
            z_dim: self.z_dim(),
            batch_size: self.gan.batch_size,
            epochs: self.gan.epochs.unwrap_or(base.epochs),
            adam: AdamConfig {
                lr: self.gan.lr,
                beta1: self.gan.beta1,
                beta2: self.gan.beta2,
                ..AdamConfig::default()
            },
            seed: self.seed_for(Stream::Gan),
            objective: self.gan.objective,
            real_label: self.gan.real_label,
            divergence_limit: self.gan.divergence_limit,
        }
    }

    pub fn inversion_config(&self) -> InversionConfig {
        let i = &self.inversion;
        InversionConfig {
            lambda: i.lambda,
            norm: i.norm,
            iterations: i.iterations,
            search_lr: i.search_lr,
            init_seed: self.seed_for(Stream::Inverse) ^ 1,
            batch_size: i.batch_size,
            epochs: i.epochs,
            adam: AdamConfig {
                lr: i.lr,
                beta1: i.beta1,
                ..AdamConfig::default()
            },
            seed: self.seed_for(Stream::Inverse),
        }
    }

    /// Scoring settings with the configured threshold.
    pub fn scoring_config(&self) -> ScoringConfig {
        let s = &self.scoring;
        ScoringConfig {
            lambda: s.lambda,
            threshold: s.threshold,
            bottom_fraction: s.bottom_fraction,
            band_weight: s.band_weight,
            norm: s.norm,
        }
    }

    pub fn fc_config(&self) -> FcTrainConfig {
        let f = &self.fc;
        FcTrainConfig {
            lr: f.lr,
            batch_size: f.batch_size,
            max_epochs: f.max_epochs,
            patience: f.patience,
            validation_fraction: f.validation_fraction,
            seed: self.seed_for(Stream::Head),
        }
    }

    /// Checks every value; the message names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        let d = &self.data;
        if d.train_positives < 2 {
            return Err("data.train_positives must be at least 2".into());
        }
        if d.labeled_positives == 0 || d.labeled_negatives == 0 {
            return Err("data.labeled_positives and data.labeled_negatives must be positive".into());
        }
        if d.world_length < 8 {
            return Err("data.world_length must be at least 8".into());
        }
        if !(d.hazard_density > 0.0 && d.hazard_density < 1.0) {
            return Err("data.hazard_density must lie in (0, 1)".into());
        }
        if d.steps_per_world == 0 {
            return Err("data.steps_per_world must be positive".into());
        }
        if !(0.0..=gonogo_scene::render::MAX_NOISE).contains(&d.noise) {
            return Err(format!("data.noise must lie in [0, {}]", gonogo_scene::render::MAX_NOISE));
        }
        self.labeling.validate().map_err(|e| format!("labeling: {e}"))?;
        self.gan_config().validate().map_err(|e| format!("gan: {e}"))?;
        self.inversion_config().validate().map_err(|e| format!("inversion: {e}"))?;
        self.scoring_config().validate().map_err(|e| format!("scoring: {e}"))?;
        self.fc_config().validate().map_err(|e| format!("fc: {e}"))?;
        if self.fc.branches.is_empty() {
            return Err("fc.branches must name at least one of R, D, F".into());
        }
        let e = &self.eval;
        if e.bench_repetitions < 3 {
            return Err("eval.bench_repetitions must be at least 3".into());
        }
        if e.baseline_per_class == 0 || e.bench_images == 0 || e.speed_images == 0 {
            return Err("eval.baseline_per_class, eval.bench_images and eval.speed_images must be positive".into());
        }
        let c = &self.costmap;
        if c.world_length < 8 || c.goal_x >= c.world_length || c.obstacle_x == 0 || c.obstacle_x >= c.goal_x {
            return Err("costmap needs 0 < obstacle_x < goal_x < world_length and world_length ≥ 8".into());
        }
        if !(c.inflation_radius >= 0.0) || !(c.mark_range > 0.0) || !(c.cost_weight >= 0.0) || c.max_steps == 0 {
            return Err("costmap radii, weights and step limit must be nonnegative and finite".into());
        }
        Ok(())
    }
}
