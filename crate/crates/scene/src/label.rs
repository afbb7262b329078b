//! Velocity-based automatic labeling, simulated hand labels, flipping and
//! annotated splits.

use gonogo_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::world::RunTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Unlabeled,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub label: Label,
    pub trace_id: u32,
    pub index: u32,
    pub flipped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    /// Speed a frame's whole window must exceed, in m/s.
    pub v_th: f64,
    /// Frames before the current one that must be fast.
    pub past: usize,
    /// Frames after the current one that must be fast.
    pub ahead: usize,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            v_th: 0.3,
            past: 5,
            ahead: 3,
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v_th.is_finite() && self.v_th > 0.0 {
            Ok(())
        } else {
            Err(SceneError::InvalidParams(format!("v_th must be positive, got {}", self.v_th)))
        }
    }
}

/// `true` where frame `i` has its full window `[i - past, i + ahead]` inside
/// the trace and every velocity in it strictly above `v_th`.
pub fn positive_mask(velocities: &[f64], cfg: &LabelingConfig) -> Vec<bool> {
    let n = velocities.len();
    let mut mask = vec![false; n];
    // Length of the run of fast frames ending at each index.
    let mut run = 0usize;
    let mut fast_run = vec![0usize; n];
    for (i, &v) in velocities.iter().enumerate() {
        run = if v > cfg.v_th { run + 1 } else { 0 };
        fast_run[i] = run;
    }
    let window = cfg.past + cfg.ahead + 1;
    for (i, m) in mask.iter_mut().enumerate() {
        if i < cfg.past || i + cfg.ahead >= n {
            continue;
        }
        *m = fast_run[i + cfg.ahead] >= window;
    }
    mask
}

/// Labels frames positive or unlabeled; never negative.
pub fn auto_label(trace: &RunTrace, trace_id: u32, cfg: &LabelingConfig) -> Vec<LabeledFrame> {
    positive_mask(&trace.velocities, cfg)
        .into_iter()
        .zip(&trace.frames)
        .enumerate()
        .map(|(i, (pos, img))| LabeledFrame {
            image: img.clone(),
            label: if pos { Label::Positive } else { Label::Unlabeled },
            trace_id,
            index: i as u32,
            flipped: false,
        })
        .collect()
}

/// Simulated annotation: frames whose ground-truth view is not traversable,
/// labeled negative. Stands in for a human marking blocked views.
pub fn hand_label_negatives(trace: &RunTrace, trace_id: u32) -> Vec<LabeledFrame> {
    trace
        .views
        .iter()
        .zip(&trace.frames)
        .enumerate()
        .filter(|(_, (view, _))| !view.traversable())
        .map(|(i, (_, img))| LabeledFrame {
            image: img.clone(),
            label: Label::Negative,
            trace_id,
            index: i as u32,
            flipped: false,
        })
        .collect()
}

pub fn flip_horizontal(img: &Tensor) -> Tensor {
    let w = *img.shape().last().expect("image has a width");
    let mut out = img.clone();
    for (dst, src) in out.data_mut().chunks_mut(w).zip(img.data().chunks(w)) {
        for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *s;
        }
    }
    out
}

/// Originals followed by their mirror images.
pub fn augment_flip(frames: &[LabeledFrame]) -> Vec<LabeledFrame> {
    let mut out = frames.to_vec();
    out.extend(frames.iter().map(|f| LabeledFrame {
        image: flip_horizontal(&f.image),
        flipped: !f.flipped,
        ..f.clone()
    }));
    out
}

#[derive(Clone, Debug)]
pub struct AnnotatedSplit {
    pub train: Vec<LabeledFrame>,
    pub test: Vec<LabeledFrame>,
    /// Labeled training positives over all available positives.
    pub labeled_fraction: f64,
}

pub const DEFAULT_SPLIT_SIZE: usize = 400;

/// Samples `n_pos` positives and `n_neg` negatives for each of a training and
/// a test split, disjoint from each other.
pub fn build_annotated_split(
    positives: &[LabeledFrame],
    negatives: &[LabeledFrame],
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<AnnotatedSplit> {
    let have_pos = positives.iter().filter(|f| f.label == Label::Positive).count();
    let have_neg = negatives.iter().filter(|f| f.label == Label::Negative).count();
    if have_pos < 2 * n_pos || have_neg < 2 * n_neg {
        return Err(SceneError::InsufficientCorpus {
            need_pos: 2 * n_pos,
            need_neg: 2 * n_neg,
            have_pos,
            have_neg,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |pool: &[LabeledFrame], label: Label, n: usize| {
        let mut idx: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].label == label).collect();
        idx.shuffle(&mut rng);
        idx.truncate(2 * n);
        idx
    };
    let pos = pick(positives, Label::Positive, n_pos);
    let neg = pick(negatives, Label::Negative, n_neg);
    let take = |pool: &[LabeledFrame], idx: &[usize]| idx.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>();
    let mut train = take(positives, &pos[..n_pos]);
    train.extend(take(negatives, &neg[..n_neg]));
    let mut test = take(positives, &pos[n_pos..]);
    test.extend(take(negatives, &neg[n_neg..]));
    Ok(AnnotatedSplit {
        train,
        test,
        labeled_fraction: n_pos as f64 / have_pos as f64,
    })
}
