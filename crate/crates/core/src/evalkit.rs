//! Classification metrics, threshold calibration, the component ablation
//! harness and throughput measurement.

use std::fmt::Write as _;
use std::time::Instant;

use gonogo_scene::{Label, LabeledFrame};
use gonogo_tensor::{memory, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::stack_images;
use crate::error::{CoreError, Result};
use crate::gan::GanModels;
use crate::inverse::{invert_feedforward, invert_iterative, InverseModel, InversionConfig};
use crate::scoring::{
    branch_label, classify_fc, score, score_latent, train_fc, Branch, Decision, FcHead, FcTrainConfig,
    HeadModels, ScoreBreakdown, ScoringConfig, WeightMasks,
};

/// Counts with GO as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_decisions(predicted: &[Decision], truth_go: &[bool]) -> Self {
        assert_eq!(predicted.len(), truth_go.len(), "prediction and truth lengths differ");
        let mut c = Self::default();
        for (p, &t) in predicted.iter().zip(truth_go) {
            match (p.is_go(), t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Fractions in `[0, 1]`; `None` where the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    (precision + recall > 0.0).then(|| 2.0 * precision * recall / (precision + recall))
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let recall = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => f1_score(p, r),
        _ => None,
    };
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        recall,
        precision,
        f1,
    }
}

fn class_counts(scores: &[(f64, bool)]) -> Result<(usize, usize)> {
    let positives = scores.iter().filter(|s| s.1).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CoreError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub f1: f64,
}

/// Threshold maximizing F1 of the rule `score < threshold ⇒ GO` over
/// `(score, is_go)` pairs. Candidates are the distinct scores and the value
/// just above the largest; ties go to the smaller threshold.
pub fn calibrate_threshold(scores: &[(f64, bool)]) -> Result<Calibration> {
    let (positives, _) = class_counts(scores)?;
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(CoreError::Config("non-finite score in calibration set".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let top = sorted.last().expect("nonempty").0;
    let mut best: Option<Calibration> = None;
    // Walking up the sorted scores, everything before index i is GO.
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    loop {
        let threshold = if i < sorted.len() { sorted[i].0 } else { top.next_up() };
        let fn_ = positives as u64 - tp;
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        if best.is_none_or(|b| f1 > b.f1) {
            best = Some(Calibration { threshold, f1 });
        }
        if i == sorted.len() {
            break;
        }
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Probability that a NO GO item scores higher than a GO item, ties
/// counting half. 1.0 means the score ranks every GO item first.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64> {
    let (positives, negatives) = class_counts(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Rank-sum over tie groups.
    let mut neg_rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        neg_rank_sum += mid_rank * sorted[i..j].iter().filter(|s| !s.1).count() as f64;
        i = j;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((neg_rank_sum - n * (n + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub hz: f64,
    pub peak_bytes: usize,
    pub seconds: Vec<f64>,
}

/// Median images per second of `run` over `images`, after one untimed
/// warm-up pass. Peak memory counts tensor buffers above the level at entry.
pub fn benchmark<F>(images: &Tensor, repetitions: usize, mut run: F) -> Result<BenchResult>
where
    F: FnMut(&Tensor) -> Result<()>,
{
    if repetitions < 3 {
        return Err(CoreError::Config("benchmark needs at least 3 repetitions".into()));
    }
    let n = images.shape().first().copied().unwrap_or(1);
    run(images)?;
    let base = memory::live_bytes();
    memory::reset_peak();
    let mut seconds = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        run(images)?;
        seconds.push(start.elapsed().as_secs_f64());
    }
    let peak_bytes = memory::peak_bytes().saturating_sub(base);
    let mut sorted = seconds.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    };
    Ok(BenchResult {
        hz: n as f64 / median.max(f64::MIN_POSITIVE),
        peak_bytes,
        seconds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Iterative inversion, unweighted distances, threshold decision.
    UnsupervisedBaseline,
    /// Feed-forward inversion, weighted distances, threshold decision.
    UnsupervisedOurs,
    /// Feed-forward inversion feeding a trained fusion head.
    SupervisedOurs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub mode: AblationMode,
    pub components: Vec<Branch>,
}

impl AblationSpec {
    pub fn new(mode: AblationMode, components: &[Branch]) -> Result<Self> {
        let mut c = components.to_vec();
        c.sort();
        c.dedup();
        if c.is_empty() {
            return Err(CoreError::Config("an ablation needs at least one component".into()));
        }
        if mode != AblationMode::SupervisedOurs && c.contains(&Branch::Features) {
            return Err(CoreError::Config(
                "component F is only defined for the supervised head".into(),
            ));
        }
        Ok(Self { mode, components: c })
    }

    /// Weight of the feature term implied by the components.
    pub fn lambda(&self, configured: f32) -> f32 {
        match (self.components.contains(&Branch::Residual), self.components.contains(&Branch::FeatureDiff)) {
            (true, false) => 0.0,
            (false, true) => 1.0,
            _ => configured,
        }
    }

    pub fn uses_masks(&self) -> bool {
        self.mode == AblationMode::UnsupervisedOurs
    }

    pub fn label(&self) -> String {
        let mode = match self.mode {
            AblationMode::UnsupervisedBaseline => "baseline",
            AblationMode::UnsupervisedOurs => "unsupervised",
            AblationMode::SupervisedOurs => "supervised",
        };
        format!("{mode} {}", branch_label(&self.components))
    }
}

/// Everything an ablation row reads.
pub struct EvalContext<'a> {
    pub gan: &'a GanModels,
    pub inv: &'a InverseModel,
    pub masks: &'a WeightMasks,
    pub scoring: ScoringConfig,
    pub inversion: InversionConfig,
    pub fc: FcTrainConfig,
    /// Labeled items for calibration and head training.
    pub train: &'a [LabeledFrame],
    pub test: &'a [LabeledFrame],
    /// Items per class taken from each split for the iterative baseline.
    pub baseline_per_class: usize,
    /// Images timed by the throughput measurement.
    pub bench_images: usize,
    pub bench_repetitions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub spec: AblationSpec,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    /// Threshold used by unsupervised rows.
    pub threshold: Option<f64>,
    pub hz: f64,
    pub peak_mb: f64,
    pub evaluated: usize,
}

fn truth(frames: &[LabeledFrame]) -> Result<Vec<bool>> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| match f.label {
            Label::Positive => Ok(true),
            Label::Negative => Ok(false),
            Label::Unlabeled => Err(CoreError::Config(format!("evaluation item {i} is unlabeled"))),
        })
        .collect()
}

/// First `per_class` items of each class, in input order.
pub fn class_subset(frames: &[LabeledFrame], per_class: usize) -> Vec<LabeledFrame> {
    let mut out = Vec::new();
    for label in [Label::Positive, Label::Negative] {
        out.extend(frames.iter().filter(|f| f.label == label).take(per_class).cloned());
    }
    out
}

fn stack(frames: &[LabeledFrame]) -> Result<Tensor> {
    if frames.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    Ok(stack_images(frames.iter().map(|f| &f.image)))
}

fn iterative_scores(
    frames: &[LabeledFrame],
    ctx: &EvalContext<'_>,
    cfg: &ScoringConfig,
) -> Result<Vec<ScoreBreakdown>> {
    let inversion = InversionConfig {
        lambda: cfg.lambda,
        ..ctx.inversion.clone()
    };
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let found = invert_iterative(&f.image, ctx.gan, &inversion, None)?;
        let side = ctx.gan.scale.image_side();
        let x = f.image.clone().reshape(&[1, 3, side, side])?;
        out.extend(score_latent(&x, &found.z, ctx.gan, None, cfg)?);
    }
    Ok(out)
}

fn paired(scores: &[ScoreBreakdown], truth: &[bool]) -> Vec<(f64, bool)> {
    scores.iter().map(|s| s.anomaly).zip(truth.iter().copied()).collect()
}

/// Evaluates one row: calibrate or train on `ctx.train`, count on `ctx.test`.
pub fn run_ablation(spec: &AblationSpec, ctx: &EvalContext<'_>) -> Result<ReportRow> {
    let scoring = ScoringConfig {
        lambda: spec.lambda(ctx.scoring.lambda),
        ..ctx.scoring
    };
    let bench_frames: Vec<LabeledFrame> = ctx.test.iter().take(ctx.bench_images.max(1)).cloned().collect();
    let bench_x = stack(&bench_frames)?;
    let reps = ctx.bench_repetitions;
    let (predicted, truth_go, threshold, bench) = match spec.mode {
        AblationMode::UnsupervisedBaseline => {
            let train = class_subset(ctx.train, ctx.baseline_per_class);
            let test = class_subset(ctx.test, ctx.baseline_per_class);
            let cal = calibrate_threshold(&paired(&iterative_scores(&train, ctx, &scoring)?, &truth(&train)?))?;
            let scoring = ScoringConfig {
                threshold: cal.threshold,
                ..scoring
            };
            let s = iterative_scores(&test, ctx, &scoring)?;
            let one = stack(&test[..1])?;
            let bench = benchmark(&one, reps, |_| iterative_scores(&test[..1], ctx, &scoring).map(|_| ()))?;
            (s.iter().map(|b| b.decision).collect::<Vec<_>>(), truth(&test)?, Some(cal.threshold), bench)
        }
        AblationMode::UnsupervisedOurs => {
            let train_x = stack(ctx.train)?;
            let cal_scores = score(&train_x, ctx.gan, ctx.inv, Some(ctx.masks), &scoring)?;
            let cal = calibrate_threshold(&paired(&cal_scores, &truth(ctx.train)?))?;
            let scoring = ScoringConfig {
                threshold: cal.threshold,
                ..scoring
            };
            let test_x = stack(ctx.test)?;
            let s = score(&test_x, ctx.gan, ctx.inv, Some(ctx.masks), &scoring)?;
            let bench = benchmark(&bench_x, reps, |x| {
                score(x, ctx.gan, ctx.inv, Some(ctx.masks), &scoring).map(|_| ())
            })?;
            (s.iter().map(|b| b.decision).collect(), truth(ctx.test)?, Some(cal.threshold), bench)
        }
        AblationMode::SupervisedOurs => {
            let models = HeadModels {
                gan: ctx.gan,
                inv: Some(ctx.inv),
            };
            let (head, _) = train_fc(ctx.train, &spec.components, models, &ctx.fc)?;
            let test_x = stack(ctx.test)?;
            let out = classify_fc(&head, &test_x, models)?;
            let bench = benchmark(&bench_x, reps, |x| classify_with(&head, x, models))?;
            (out.iter().map(|o| o.1).collect(), truth(ctx.test)?, None, bench)
        }
    };
    let counts = ConfusionCounts::from_decisions(&predicted, &truth_go);
    Ok(ReportRow {
        label: spec.label(),
        spec: spec.clone(),
        counts,
        metrics: metrics(&counts),
        threshold,
        hz: bench.hz,
        peak_mb: bench.peak_bytes as f64 / (1024.0 * 1024.0),
        evaluated: predicted.len(),
    })
}

fn classify_with(head: &FcHead, x: &Tensor, models: HeadModels<'_>) -> Result<()> {
    classify_fc(head, x, models).map(|_| ())
}

/// Throughput of the two inversion routes on the same images.
pub fn inversion_speed(
    images: &Tensor,
    gan: &GanModels,
    inv: &InverseModel,
    cfg: &InversionConfig,
    repetitions: usize,
) -> Result<(BenchResult, BenchResult)> {
    let feedforward = benchmark(images, repetitions, |x| invert_feedforward(x, inv).map(|_| ()))?;
    let iterative = benchmark(images, repetitions, |x| {
        for i in 0..x.shape()[0] {
            invert_iterative(&x.index_first(i), gan, cfg, None)?;
        }
        Ok(())
    })?;
    Ok((feedforward, iterative))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// Fixed-width table: one line per row.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# throughput excludes file I/O; memory counts tensor buffers");
    let _ = writeln!(
        s,
        "{:<20} {:>9} {:>9} {:>10} {:>9} {:>10} {:>11} {:>6}",
        "method", "accuracy", "recall", "precision", "f1", "hz", "memory_mb", "n"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<20} {:>9} {:>9} {:>10} {:>9} {:>10.3} {:>11.2} {:>6}",
            r.label,
            pct(r.metrics.accuracy),
            pct(r.metrics.recall),
            pct(r.metrics.precision),
            pct(r.metrics.f1),
            r.hz,
            r.peak_mb,
            r.evaluated
        );
    }
    s
}

/// Rows with the nondeterministic timing fields cleared, for comparisons
/// across runs.
pub fn without_timing(rows: &[ReportRow]) -> Vec<ReportRow> {
    rows.iter()
        .cloned()
        .map(|mut r| {
            r.hz = 0.0;
            r
        })
        .collect()
}
