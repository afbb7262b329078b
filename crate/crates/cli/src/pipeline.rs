//! The pipeline stages behind each subcommand. Every stage reads its inputs
//! from and writes its outputs under one output directory.

use std::fs;
use std::path::{Path, PathBuf};

use gonogo_core::evalkit::{
    auc, calibrate_threshold, format_table, inversion_speed, run_ablation, AblationMode, AblationSpec,
    BenchResult, Calibration, EvalContext, ReportRow,
};
use gonogo_core::gan::{train_gan, GanHistory, GanModels};
use gonogo_core::inverse::{train_inverse_generator, InverseEpoch, InverseModel};
use gonogo_core::scoring::{
    classify_fc, mean_saliency, residual_weight_image, score, to_gray, train_fc, Branch, Decision,
    FcHead, FcHistory, HeadModels, ScoringConfig, WeightMasks,
};
use gonogo_core::data::stack_images;
use gonogo_costmap::{
    drive_simulated_mission, export_map, AnomalyClassifier, Cell, Classifier, GroundTruth, HeadClassifier,
    MissionConfig, MissionOutcome, MissionResult,
};
use gonogo_scene::dataset::{read_dataset, read_manifest, write_dataset, MANIFEST};
use gonogo_scene::pnm::write_pgm;
use gonogo_scene::world::{derive_seed, LANES};
use gonogo_scene::{
    augment_flip, auto_label, build_annotated_split, hand_label_negatives, simulate_run, Label, LabeledFrame,
    SceneKind, SimOptions, World,
};
use gonogo_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{Config, Stream};
use crate::error::{io_err, CliError, Result};

/// Cap on simulated worlds per harvest, far above what any valid config needs.
const MAX_WORLDS: u64 = 100_000;
/// Trace ids of the labeled pool start here, keeping them apart from the
/// training traces.
const POOL_TRACE_BASE: u32 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// Auto-labeled positives for the GAN and the inverse generator.
    Train,
    /// Hand-labeled items for calibration and head training.
    Labeled,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Labeled => "labeled",
            Split::Test => "test",
        }
    }
}

/// Paths of every artifact under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self, split: Split) -> PathBuf {
        self.root.join("data").join(split.name())
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(name)
    }

    pub fn calibration(&self) -> PathBuf {
        self.model("calibration.json")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.jsonl")
    }

    pub fn report(&self, ext: &str) -> PathBuf {
        self.root.join(format!("report.{ext}"))
    }

    pub fn bench(&self) -> PathBuf {
        self.root.join("bench.json")
    }

    pub fn costmap(&self) -> PathBuf {
        self.root.join("costmap")
    }

    pub fn saliency(&self) -> PathBuf {
        self.root.join("saliency")
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item)?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    write_file(path, &buf)
}

// ----- data ----------------------------------------------------------------

pub fn sim_options(cfg: &Config) -> SimOptions {
    SimOptions {
        side: cfg.scale.image_side(),
        noise: cfg.data.noise,
        ..SimOptions::default()
    }
}

/// Drives random worlds until `need_pos` positives and `need_neg` negatives
/// are collected; returns exactly that many of each.
pub fn harvest(
    cfg: &Config,
    stream_seed: u64,
    trace_base: u32,
    need_pos: usize,
    need_neg: usize,
) -> Result<(Vec<LabeledFrame>, Vec<LabeledFrame>)> {
    let opts = sim_options(cfg);
    let (mut pos, mut neg) = (Vec::with_capacity(need_pos), Vec::with_capacity(need_neg));
    let mut w = 0u64;
    while pos.len() < need_pos || neg.len() < need_neg {
        if w == MAX_WORLDS {
            return Err(CliError::Config {
                path: PathBuf::from("<data>"),
                reason: format!(
                    "{MAX_WORLDS} worlds gave only {} positives and {} negatives",
                    pos.len(),
                    neg.len()
                ),
            });
        }
        let world = World::random(derive_seed(stream_seed, w), cfg.data.world_length, cfg.data.hazard_density);
        let trace = simulate_run(&world, cfg.data.steps_per_world, &opts)?;
        let id = trace_base + w as u32;
        if pos.len() < need_pos {
            let fresh = auto_label(&trace, id, &cfg.labeling).into_iter();
            pos.extend(fresh.filter(|f| f.label == Label::Positive).take(need_pos - pos.len()));
        }
        if neg.len() < need_neg {
            neg.extend(hand_label_negatives(&trace, id).into_iter().take(need_neg - neg.len()));
        }
        w += 1;
    }
    Ok((pos, neg))
}

pub struct Datasets {
    pub train: Vec<LabeledFrame>,
    pub labeled: Vec<LabeledFrame>,
    pub test: Vec<LabeledFrame>,
}

impl Datasets {
    pub fn get(&self, split: Split) -> &[LabeledFrame] {
        match split {
            Split::Train => &self.train,
            Split::Labeled => &self.labeled,
            Split::Test => &self.test,
        }
    }
}

/// Training positives from one family of worlds; labeled and test splits
/// drawn without overlap from a second family.
pub fn generate_data(cfg: &Config) -> Result<Datasets> {
    let d = &cfg.data;
    let (train, _) = harvest(cfg, cfg.seed_for(Stream::TrainWorlds), 0, d.train_positives, 0)?;
    let train = if d.augment_flip { augment_flip(&train) } else { train };
    let (pool_pos, pool_neg) = harvest(
        cfg,
        cfg.seed_for(Stream::PoolWorlds),
        POOL_TRACE_BASE,
        2 * d.labeled_positives,
        2 * d.labeled_negatives,
    )?;
    let split = build_annotated_split(
        &pool_pos,
        &pool_neg,
        d.labeled_positives,
        d.labeled_negatives,
        cfg.seed_for(Stream::Split),
    )?;
    Ok(Datasets {
        train,
        labeled: split.train,
        test: split.test,
    })
}

pub fn write_datasets(layout: &Layout, data: &Datasets) -> Result<()> {
    for split in [Split::Train, Split::Labeled, Split::Test] {
        let dir = layout.data(split);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        write_dataset(&dir, data.get(split))?;
    }
    Ok(())
}

pub fn read_split(layout: &Layout, split: Split) -> Result<Vec<LabeledFrame>> {
    let dir = layout.data(split);
    if !dir.join(MANIFEST).exists() {
        return Err(CliError::MissingInput {
            what: "dataset",
            path: dir,
            hint: "gen-data",
        });
    }
    Ok(read_dataset(&dir)?)
}

// ----- models ----------------------------------------------------------------

pub fn save_gan(layout: &Layout, gan: &GanModels) -> Result<()> {
    checkpoint::save_gan(&layout.model("gen.ckpt"), &layout.model("dis.ckpt"), gan)
}

pub fn load_gan(cfg: &Config, layout: &Layout, force: bool) -> Result<GanModels> {
    checkpoint::load_gan(
        &layout.model("gen.ckpt"),
        &layout.model("dis.ckpt"),
        cfg.scale,
        cfg.z_dim(),
        force,
    )
}

pub fn load_inverse(cfg: &Config, layout: &Layout, force: bool) -> Result<InverseModel> {
    checkpoint::load_inverse(&layout.model("inv.ckpt"), cfg.scale, cfg.z_dim(), force)
}

pub fn load_head(cfg: &Config, layout: &Layout, force: bool) -> Result<FcHead> {
    checkpoint::load_head(&layout.model("fc.ckpt"), cfg.scale, &cfg.fc.branches, force)
}

pub fn train_gan_stage(cfg: &Config, layout: &Layout) -> Result<GanHistory> {
    let frames = read_split(layout, Split::Train)?;
    let (gan, history) = train_gan(&frames, &cfg.gan_config())?;
    save_gan(layout, &gan)?;
    write_jsonl(&layout.model("gan_history.jsonl"), &history.epochs)?;
    Ok(history)
}

pub fn masks(cfg: &Config) -> Result<WeightMasks> {
    Ok(WeightMasks::from_config(cfg.scale, &cfg.scoring_config())?)
}

/// F1-best threshold of the masked anomaly score on `labeled`.
pub fn calibrate(
    gan: &GanModels,
    inv: &InverseModel,
    masks: &WeightMasks,
    scoring: &ScoringConfig,
    labeled: &[LabeledFrame],
) -> Result<Calibration> {
    let x = stack_images(labeled.iter().map(|f| &f.image));
    let scores = score(&x, gan, inv, Some(masks), scoring)?;
    let pairs: Vec<(f64, bool)> = scores
        .iter()
        .zip(labeled)
        .map(|(s, f)| (s.anomaly, f.label == Label::Positive))
        .collect();
    Ok(calibrate_threshold(&pairs)?)
}

pub fn train_inv_stage(cfg: &Config, layout: &Layout, force: bool) -> Result<Vec<InverseEpoch>> {
    let gan = load_gan(cfg, layout, force)?;
    let frames = read_split(layout, Split::Train)?;
    let (inv, history) = train_inverse_generator(&frames, &gan, &cfg.inversion_config())?;
    checkpoint::save_inverse(&layout.model("inv.ckpt"), &inv)?;
    write_jsonl(&layout.model("inv_history.jsonl"), &history)?;
    if cfg.scoring.calibrate {
        let labeled = read_split(layout, Split::Labeled)?;
        let cal = calibrate(&gan, &inv, &masks(cfg)?, &cfg.scoring_config(), &labeled)?;
        write_json(&layout.calibration(), &cal)?;
    }
    Ok(history)
}

/// Scoring settings with the calibrated threshold when calibration is on.
pub fn effective_scoring(cfg: &Config, layout: &Layout) -> Result<ScoringConfig> {
    let mut s = cfg.scoring_config();
    if cfg.scoring.calibrate {
        let path = layout.calibration();
        let text = fs::read_to_string(&path).map_err(|_| CliError::MissingInput {
            what: "threshold calibration",
            path: path.clone(),
            hint: "train-inv",
        })?;
        let cal: Calibration = serde_json::from_str(&text)?;
        s.threshold = cal.threshold;
    }
    Ok(s)
}

pub fn train_fc_stage(cfg: &Config, layout: &Layout, force: bool) -> Result<FcHistory> {
    let gan = load_gan(cfg, layout, force)?;
    let needs_inv = cfg.fc.branches.iter().any(|b| b.needs_reconstruction());
    let inv = if needs_inv { Some(load_inverse(cfg, layout, force)?) } else { None };
    let labeled = read_split(layout, Split::Labeled)?;
    let models = HeadModels {
        gan: &gan,
        inv: inv.as_ref(),
    };
    let (head, history) = train_fc(&labeled, &cfg.fc.branches, models, &cfg.fc_config())?;
    checkpoint::save_head(&layout.model("fc.ckpt"), &head)?;
    write_json(&layout.model("fc_history.json"), &history)?;
    Ok(history)
}

// ----- scoring -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    #[serde(rename = "R_s")]
    pub residual: f64,
    #[serde(rename = "D_s")]
    pub feature: f64,
    #[serde(rename = "A")]
    pub anomaly: f64,
    pub t_d: Decision,
    pub fc_prob: Option<f64>,
    pub fc_decision: Option<Decision>,
}

/// Scores the dataset in `input` (the test split by default). The head's
/// columns are filled when a trained head is present.
pub fn score_stage(cfg: &Config, layout: &Layout, input: Option<&Path>, force: bool) -> Result<Vec<ScoreRecord>> {
    let gan = load_gan(cfg, layout, force)?;
    let inv = load_inverse(cfg, layout, force)?;
    let scoring = effective_scoring(cfg, layout)?;
    let head = if layout.model("fc.ckpt").exists() {
        Some(load_head(cfg, layout, force)?)
    } else {
        None
    };
    let dir = input.map_or_else(|| layout.data(Split::Test), Path::to_path_buf);
    if !dir.join(MANIFEST).exists() {
        return Err(CliError::MissingInput {
            what: "dataset",
            path: dir,
            hint: "gen-data",
        });
    }
    let records = read_manifest(&dir)?;
    let frames = read_dataset(&dir)?;
    let x = stack_images(frames.iter().map(|f| &f.image));
    let scores = score(&x, &gan, &inv, Some(&masks(cfg)?), &scoring)?;
    let fc = match &head {
        Some(h) => Some(classify_fc(
            h,
            &x,
            HeadModels {
                gan: &gan,
                inv: Some(&inv),
            },
        )?),
        None => None,
    };
    let out: Vec<ScoreRecord> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| ScoreRecord {
            id: records[i].path.clone(),
            residual: s.residual,
            feature: s.feature,
            anomaly: s.anomaly,
            t_d: s.decision,
            fc_prob: fc.as_ref().map(|v| v[i].0),
            fc_decision: fc.as_ref().map(|v| v[i].1),
        })
        .collect();
    write_jsonl(&layout.scores(), &out)?;
    Ok(out)
}

// ----- evaluation ----------------------------------------------------------------

/// Rows in the order of the report table.
pub fn report_specs() -> Vec<AblationSpec> {
    use Branch::{FeatureDiff as D, Features as F, Residual as R};
    let mut specs = Vec::new();
    for mode in [AblationMode::UnsupervisedBaseline, AblationMode::UnsupervisedOurs] {
        for c in [&[R][..], &[D], &[R, D]] {
            specs.push(AblationSpec::new(mode, c).expect("valid unsupervised row"));
        }
    }
    for c in [&[R][..], &[D], &[F], &[R, D], &[D, F], &[R, F], &[R, D, F]] {
        specs.push(AblationSpec::new(AblationMode::SupervisedOurs, c).expect("valid supervised row"));
    }
    specs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// AUC of the masked anomaly score on the test split.
    pub auc: f64,
}

pub struct Models {
    pub gan: GanModels,
    pub inv: InverseModel,
}

pub fn evaluate(
    cfg: &Config,
    models: &Models,
    labeled: &[LabeledFrame],
    test: &[LabeledFrame],
    specs: &[AblationSpec],
) -> Result<Report> {
    let masks = masks(cfg)?;
    let scoring = cfg.scoring_config();
    let ctx = EvalContext {
        gan: &models.gan,
        inv: &models.inv,
        masks: &masks,
        scoring,
        inversion: cfg.inversion_config(),
        fc: cfg.fc_config(),
        train: labeled,
        test,
        baseline_per_class: cfg.eval.baseline_per_class,
        bench_images: cfg.eval.bench_images,
        bench_repetitions: cfg.eval.bench_repetitions,
    };
    let rows = specs.iter().map(|s| run_ablation(s, &ctx)).collect::<Result<Vec<_>, _>>()?;
    let x = stack_images(test.iter().map(|f| &f.image));
    let scores = score(&x, &models.gan, &models.inv, Some(&masks), &scoring)?;
    let pairs: Vec<(f64, bool)> = scores
        .iter()
        .zip(test)
        .map(|(s, f)| (s.anomaly, f.label == Label::Positive))
        .collect();
    Ok(Report {
        rows,
        auc: auc(&pairs)?,
    })
}

pub fn eval_stage(cfg: &Config, layout: &Layout, force: bool) -> Result<Report> {
    let models = Models {
        gan: load_gan(cfg, layout, force)?,
        inv: load_inverse(cfg, layout, force)?,
    };
    let labeled = read_split(layout, Split::Labeled)?;
    let test = read_split(layout, Split::Test)?;
    let report = evaluate(cfg, &models, &labeled, &test, &report_specs())?;
    let mut text = format_table(&report.rows);
    text.push_str(&format!("# AUC of the masked anomaly score on the test split: {:.4}\n", report.auc));
    write_file(&layout.report("txt"), text.as_bytes())?;
    write_json(&layout.report("json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub images: usize,
    pub repetitions: usize,
    pub iterations: usize,
    pub feedforward: BenchResult,
    pub iterative: BenchResult,
    pub speedup: f64,
}

/// Throughput of feedforward against iterative inversion on the first test
/// images.
pub fn speed(cfg: &Config, models: &Models, test: &[LabeledFrame]) -> Result<SpeedReport> {
    let n = cfg.eval.speed_images.min(test.len());
    let x = stack_images(test[..n].iter().map(|f| &f.image));
    let inversion = cfg.inversion_config();
    let reps = cfg.eval.bench_repetitions;
    let (feedforward, iterative) = inversion_speed(&x, &models.gan, &models.inv, &inversion, reps)?;
    Ok(SpeedReport {
        images: n,
        repetitions: reps,
        iterations: inversion.iterations,
        speedup: feedforward.hz / iterative.hz,
        feedforward,
        iterative,
    })
}

pub fn bench_stage(cfg: &Config, layout: &Layout, force: bool) -> Result<SpeedReport> {
    let models = Models {
        gan: load_gan(cfg, layout, force)?,
        inv: load_inverse(cfg, layout, force)?,
    };
    let test = read_split(layout, Split::Test)?;
    let report = speed(cfg, &models, &test)?;
    write_json(&layout.bench(), &report)?;
    Ok(report)
}

// ----- costmap ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierChoice {
    /// The trained head when present, else the anomaly threshold.
    Auto,
    Anomaly,
    Head,
    Truth,
}

/// Corridor with one obstacle in the middle lane between start and goal.
pub fn demo_world(cfg: &Config) -> World {
    let c = &cfg.costmap;
    let mut world = World::open(cfg.seed_for(Stream::Mission), c.world_length);
    world.set(c.obstacle_x, LANES / 2, Some(SceneKind::Obstacle));
    world
}

pub fn mission_config(cfg: &Config) -> MissionConfig {
    let c = &cfg.costmap;
    let lane = LANES / 2;
    MissionConfig {
        max_steps: c.max_steps,
        inflation_radius: c.inflation_radius,
        mark_range: c.mark_range,
        lethal_cutoff: c.lethal_cutoff,
        cost_weight: c.cost_weight,
        sim: sim_options(cfg),
        ..MissionConfig::new(Cell::new(0, lane), Cell::new(c.goal_x, lane))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub classifier: ClassifierChoice,
    pub outcome: MissionOutcome,
    pub steps: usize,
    pub lethal_cells: usize,
    pub agreement: f64,
    pub trajectory: Vec<(usize, usize)>,
}

pub fn run_mission(cfg: &Config, classifier: &mut dyn Classifier) -> Result<MissionResult> {
    Ok(drive_simulated_mission(&demo_world(cfg), classifier, &mission_config(cfg))?)
}

pub fn costmap_stage(
    cfg: &Config,
    layout: &Layout,
    choice: ClassifierChoice,
    force: bool,
) -> Result<MissionSummary> {
    let choice = match choice {
        ClassifierChoice::Auto if layout.model("fc.ckpt").exists() => ClassifierChoice::Head,
        ClassifierChoice::Auto => ClassifierChoice::Anomaly,
        other => other,
    };
    let result = match choice {
        ClassifierChoice::Truth => run_mission(cfg, &mut GroundTruth)?,
        ClassifierChoice::Anomaly => {
            let gan = load_gan(cfg, layout, force)?;
            let inv = load_inverse(cfg, layout, force)?;
            let masks = masks(cfg)?;
            let mut c = AnomalyClassifier {
                gan: &gan,
                inv: &inv,
                masks: &masks,
                cfg: effective_scoring(cfg, layout)?,
            };
            run_mission(cfg, &mut c)?
        }
        ClassifierChoice::Head | ClassifierChoice::Auto => {
            let gan = load_gan(cfg, layout, force)?;
            let head = load_head(cfg, layout, force)?;
            let inv = if head.needs_reconstruction() {
                Some(load_inverse(cfg, layout, force)?)
            } else {
                None
            };
            let mut c = HeadClassifier {
                head: &head,
                models: HeadModels {
                    gan: &gan,
                    inv: inv.as_ref(),
                },
            };
            run_mission(cfg, &mut c)?
        }
    };
    let dir = layout.costmap();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    export_map(&result.map, &dir.join("map"), cfg.costmap.lethal_cutoff)?;
    write_jsonl(&dir.join("mission.jsonl"), &result.log)?;
    let summary = MissionSummary {
        classifier: choice,
        outcome: result.outcome,
        steps: result.log.len(),
        lethal_cells: result.map.lethal_count(),
        agreement: result.agreement(),
        trajectory: result.trajectory.iter().map(|c| (c.x, c.y)).collect(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

// ----- saliency ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencySummary {
    pub images: usize,
    /// Share of the mean positive saliency in the bottom half of the image.
    pub bottom_half_share: f64,
}

/// Share of a map's total mass in its bottom half.
pub fn bottom_half_share(map: &Tensor) -> f64 {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let total: f64 = map.data().iter().map(|&v| f64::from(v)).sum();
    let bottom: f64 = map.data()[(h / 2) * w..].iter().map(|&v| f64::from(v)).sum();
    if total > 0.0 {
        bottom / total
    } else {
        0.0
    }
}

/// Mean saliency over `images` positives of the test split.
pub fn positive_saliency(
    head: &FcHead,
    models: HeadModels<'_>,
    test: &[LabeledFrame],
    images: usize,
) -> Result<Tensor> {
    let positives = test.iter().filter(|f| f.label == Label::Positive).take(images);
    Ok(mean_saliency(head, models, positives.map(|f| &f.image))?)
}

pub fn saliency_stage(cfg: &Config, layout: &Layout, images: usize, force: bool) -> Result<SaliencySummary> {
    let gan = load_gan(cfg, layout, force)?;
    let head = load_head(cfg, layout, force)?;
    let inv = if head.needs_reconstruction() {
        Some(load_inverse(cfg, layout, force)?)
    } else {
        None
    };
    let models = HeadModels {
        gan: &gan,
        inv: inv.as_ref(),
    };
    let test = read_split(layout, Split::Test)?;
    let dir = layout.saliency();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let map = positive_saliency(&head, models, &test, images)?;
    write_pgm(&dir.join("mean_positive.pgm"), &to_gray(&map), Some("mean saliency, GO class"))?;
    let negatives = test.iter().filter(|f| f.label == Label::Negative).take(images);
    let neg_map = mean_saliency(&head, models, negatives.map(|f| &f.image))?;
    write_pgm(&dir.join("mean_negative.pgm"), &to_gray(&neg_map), Some("mean saliency, NO GO class"))?;
    if head.branches().contains(&Branch::Residual) {
        write_pgm(&dir.join("residual_weights.pgm"), &residual_weight_image(&head)?, Some("R-branch weights"))?;
    }
    let n = test.iter().filter(|f| f.label == Label::Positive).take(images).count();
    let summary = SaliencySummary {
        images: n,
        bottom_half_share: bottom_half_share(&map),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}
