//! Closed-loop drive through the grid world: look, classify, mark, plan,
//! move.

use gonogo_core::gan::GanModels;
use gonogo_core::inverse::InverseModel;
use gonogo_core::scoring::{classify_fc, score, Decision, FcHead, HeadModels, ScoringConfig, WeightMasks};
use gonogo_scene::world::{derive_seed, frame_params, look_ahead, LANES};
use gonogo_scene::{render_scene, SimOptions, View, World};
use gonogo_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CostmapError, Result};
use crate::grid::{Cell, Costmap, MapPose, DEFAULT_LETHAL_CUTOFF};
use crate::plan::{plan, Path, PlanRequest};

/// What the robot knows when it decides.
pub struct Observation<'a> {
    /// Forward camera view, `[3, H, W]`.
    pub image: &'a Tensor,
    pub pose: MapPose,
    /// Ground truth behind the image; only stubs may read it.
    pub view: View,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub decision: Decision,
    pub anomaly: Option<f64>,
}

pub trait Classifier {
    fn classify(&mut self, obs: &Observation<'_>) -> Result<Verdict>;
}

/// Reads the true view instead of the image.
pub struct GroundTruth;

impl Classifier for GroundTruth {
    fn classify(&mut self, obs: &Observation<'_>) -> Result<Verdict> {
        Ok(Verdict {
            decision: if obs.view.traversable() { Decision::Go } else { Decision::NoGo },
            anomaly: None,
        })
    }
}

fn as_batch(image: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    Ok(image.clone().reshape(&shape).map_err(gonogo_core::CoreError::from)?)
}

/// Threshold decision on the anomaly score.
pub struct AnomalyClassifier<'a> {
    pub gan: &'a GanModels,
    pub inv: &'a InverseModel,
    pub masks: &'a WeightMasks,
    pub cfg: ScoringConfig,
}

impl Classifier for AnomalyClassifier<'_> {
    fn classify(&mut self, obs: &Observation<'_>) -> Result<Verdict> {
        let s = score(&as_batch(obs.image)?, self.gan, self.inv, Some(self.masks), &self.cfg)?;
        Ok(Verdict {
            decision: s[0].decision,
            anomaly: Some(s[0].anomaly),
        })
    }
}

/// Decision of a trained fusion head.
pub struct HeadClassifier<'a> {
    pub head: &'a FcHead,
    pub models: HeadModels<'a>,
}

impl Classifier for HeadClassifier<'_> {
    fn classify(&mut self, obs: &Observation<'_>) -> Result<Verdict> {
        let out = classify_fc(self.head, &as_batch(obs.image)?, self.models)?;
        Ok(Verdict {
            decision: out[0].1,
            anomaly: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissionConfig {
    /// `(x, lane)`.
    pub start: Cell,
    pub goal: Cell,
    pub max_steps: usize,
    pub inflation_radius: f64,
    pub mark_range: f64,
    pub lethal_cutoff: u8,
    pub cost_weight: f64,
    pub sim: SimOptions,
}

impl MissionConfig {
    pub fn new(start: Cell, goal: Cell) -> Self {
        Self {
            start,
            goal,
            max_steps: 200,
            inflation_radius: 1.5,
            mark_range: 1.0,
            lethal_cutoff: DEFAULT_LETHAL_CUTOFF,
            cost_weight: 1.0,
            sim: SimOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub pose: (f64, f64, f64),
    pub decision: Decision,
    #[serde(rename = "A")]
    pub anomaly: Option<f64>,
    pub replanned: bool,
    /// Decision the true view calls for.
    pub truth: Decision,
    /// The move was refused because the next cell holds a hazard.
    pub bumped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissionOutcome {
    Reached,
    /// Step limit hit before the goal.
    Timeout,
    /// The map leaves no route to the goal.
    NoPath,
}

#[derive(Clone, Debug)]
pub struct MissionResult {
    pub outcome: MissionOutcome,
    pub map: Costmap,
    /// Cells the robot occupied, in order.
    pub trajectory: Vec<Cell>,
    /// Last plan made.
    pub plan: Option<Path>,
    pub log: Vec<LogEntry>,
}

impl MissionResult {
    /// Share of steps whose decision matches the true view.
    pub fn agreement(&self) -> f64 {
        if self.log.is_empty() {
            return 1.0;
        }
        self.log.iter().filter(|e| e.decision == e.truth).count() as f64 / self.log.len() as f64
    }
}

/// Runs the loop on a map with one cell per world cell: x along the
/// corridor, y the lane. The camera looks along the direction of travel.
pub fn drive_simulated_mission(
    world: &World,
    classifier: &mut dyn Classifier,
    cfg: &MissionConfig,
) -> Result<MissionResult> {
    let mut map = Costmap::new(world.length, LANES, 1.0, (0.0, 0.0))?;
    map.check(cfg.start)?;
    map.check(cfg.goal)?;
    if world.hazard(cfg.start.x as i64, cfg.start.y).is_some() {
        return Err(CostmapError::InvalidParams("the start cell holds a hazard".into()));
    }
    let request = |start: Cell| PlanRequest {
        start,
        goal: cfg.goal,
        lethal_cutoff: cfg.lethal_cutoff,
        cost_weight: cfg.cost_weight,
    };
    let mut here = cfg.start;
    let mut dir: i64 = if cfg.goal.x < cfg.start.x { -1 } else { 1 };
    let mut trajectory = vec![here];
    let mut log = Vec::new();
    let mut current = plan(&map, &request(here))?;
    for step in 0..cfg.max_steps {
        if here == cfg.goal {
            return Ok(MissionResult {
                outcome: MissionOutcome::Reached,
                map,
                trajectory,
                plan: current,
                log,
            });
        }
        let view = look_ahead(world, here.x as i64, here.y, dir);
        let params = frame_params(derive_seed(world.seed, 1_000_000 + step as u64), view, &cfg.sim);
        let (image, _) = render_scene(&params)?;
        let pose = MapPose {
            x: here.x as f64 + 0.5,
            y: here.y as f64 + 0.5,
            heading: if dir > 0 { 0.0 } else { std::f64::consts::PI },
        };
        let verdict = classifier.classify(&Observation {
            image: &image,
            pose,
            view,
        })?;
        map.mark_observation(pose, verdict.decision, cfg.mark_range);
        let replanned = verdict.decision == Decision::NoGo;
        if replanned {
            map.inflate(cfg.inflation_radius)?;
            current = plan(&map, &request(here))?;
        }
        let Some(path) = current.as_ref() else {
            log.push(entry(step, pose, verdict, view, replanned, false));
            return Ok(MissionResult {
                outcome: MissionOutcome::NoPath,
                map,
                trajectory,
                plan: None,
                log,
            });
        };
        let pos = path.cells.iter().position(|&c| c == here).unwrap_or(0);
        let next = path.cells[(pos + 1).min(path.cells.len() - 1)];
        let bumped = world.hazard(next.x as i64, next.y).is_some();
        if !bumped {
            if next.x != here.x {
                dir = if next.x > here.x { 1 } else { -1 };
            }
            here = next;
            trajectory.push(here);
        }
        log.push(entry(step, pose, verdict, view, replanned, bumped));
    }
    let outcome = if here == cfg.goal {
        MissionOutcome::Reached
    } else {
        MissionOutcome::Timeout
    };
    Ok(MissionResult {
        outcome,
        map,
        trajectory,
        plan: current,
        log,
    })
}

fn entry(step: usize, pose: MapPose, verdict: Verdict, view: View, replanned: bool, bumped: bool) -> LogEntry {
    LogEntry {
        step,
        pose: (pose.x, pose.y, pose.heading),
        decision: verdict.decision,
        anomaly: verdict.anomaly,
        replanned,
        truth: if view.traversable() { Decision::Go } else { Decision::NoGo },
        bumped,
    }
}
