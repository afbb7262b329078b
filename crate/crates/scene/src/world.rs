//! A ring-shaped three-lane corridor and a robot driving around it.

use gonogo_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::render::{render_scene, SceneKind, SceneParams};

pub const LANES: usize = 3;
/// Hazards farther than this many cells are not visible in a frame.
pub const VIEW_CELLS: u32 = 4;

/// Mixes a seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Grid world: `length` cells along the corridor (wrapping), three lanes across.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub length: usize,
    cells: Vec<Option<SceneKind>>,
}

impl World {
    pub fn open(seed: u64, length: usize) -> Self {
        assert!(length >= 8, "world too short");
        Self {
            seed,
            length,
            cells: vec![None; length * LANES],
        }
    }

    /// Scatters hazards with probability `density` per cell, never closing
    /// all lanes at once and keeping the first cells clear.
    pub fn random(seed: u64, length: usize, density: f64) -> Self {
        let mut world = Self::open(seed, length);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
        for x in 3..length {
            for lane in 0..LANES {
                if rng.random_bool(density.clamp(0.0, 1.0)) {
                    let kind = if rng.random_bool(0.5) {
                        SceneKind::Obstacle
                    } else {
                        SceneKind::Edge
                    };
                    world.set(x, lane, Some(kind));
                }
            }
            if (0..LANES).all(|l| world.hazard(x as i64, l).is_some()) {
                let keep = rng.random_range(0..LANES);
                world.set(x, keep, None);
            }
        }
        world
    }

    /// An obstacle across every lane at cell `x`.
    pub fn with_wall(seed: u64, length: usize, x: usize) -> Self {
        let mut world = Self::open(seed, length);
        for lane in 0..LANES {
            world.set(x, lane, Some(SceneKind::Obstacle));
        }
        world
    }

    pub fn set(&mut self, x: usize, lane: usize, hazard: Option<SceneKind>) {
        let x = x % self.length;
        self.cells[x * LANES + lane] = hazard;
    }

    pub fn hazard(&self, x: i64, lane: usize) -> Option<SceneKind> {
        let x = x.rem_euclid(self.length as i64) as usize;
        self.cells[x * LANES + lane]
    }

    pub fn hazard_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Position in meters (one cell is one meter) and heading in radians,
/// 0 pointing along increasing `x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// What the camera sees ahead: the nearest hazard within view, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct View {
    pub kind: SceneKind,
    pub distance: u32,
}

impl View {
    pub fn clear() -> Self {
        Self {
            kind: SceneKind::Corridor,
            distance: VIEW_CELLS + 1,
        }
    }

    pub fn traversable(&self) -> bool {
        self.kind == SceneKind::Corridor || self.distance > 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub side: usize,
    pub noise: f32,
    /// Cruise speed in m/s (one step is one frame).
    pub cruise: f64,
    pub cruise_jitter: f64,
    /// Speed range while a hazard is within `slow_cells`.
    pub slow: (f64, f64),
    pub slow_cells: u32,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            side: 32,
            noise: 0.03,
            cruise: 0.5,
            cruise_jitter: 0.1,
            slow: (0.1, 0.2),
            slow_cells: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub velocities: Vec<f64>,
    pub frames: Vec<Tensor>,
    pub poses: Vec<Pose>,
    /// Ground truth of each frame.
    pub views: Vec<View>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }
}

/// The view from cell `cell` in `lane` looking along `dir` (+1 or -1).
pub fn look_ahead(world: &World, cell: i64, lane: usize, dir: i64) -> View {
    for k in 1..=VIEW_CELLS {
        if let Some(kind) = world.hazard(cell + dir * i64::from(k), lane) {
            return View { kind, distance: k };
        }
    }
    View::clear()
}

/// Scene parameters for a frame showing `view`.
pub fn frame_params(seed: u64, view: View, opts: &SimOptions) -> SceneParams {
    let mut p = SceneParams::new(seed, opts.side, view.kind);
    p.distance = view.distance.min(VIEW_CELLS);
    p.noise = opts.noise;
    p
}

/// Drives a robot for `steps` frames starting in the middle lane at `x = 0.5`.
///
/// The robot cruises until a hazard is within `slow_cells`, then crawls up to
/// the boundary of the blocked cell and either sidesteps into a free lane or
/// turns around.
pub fn simulate_run(world: &World, steps: usize, opts: &SimOptions) -> Result<RunTrace> {
    if steps == 0 {
        return Err(SceneError::InvalidParams("a run needs at least one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(world.seed, 0));
    let mut x = 0.5f64;
    let mut lane = 1usize;
    let mut dir = 1i64;
    let len = world.length as f64;
    let mut trace = RunTrace {
        velocities: Vec::with_capacity(steps),
        frames: Vec::with_capacity(steps),
        poses: Vec::with_capacity(steps),
        views: Vec::with_capacity(steps),
    };
    for i in 0..steps {
        let cell = x.floor() as i64;
        let view = look_ahead(world, cell, lane, dir);
        let params = frame_params(derive_seed(world.seed, i as u64 + 1), view, opts);
        let (frame, _) = render_scene(&params)?;
        let slow = view.kind != SceneKind::Corridor && view.distance <= opts.slow_cells;
        let v = if slow {
            rng.random_range(opts.slow.0..=opts.slow.1)
        } else {
            opts.cruise + rng.random_range(0.0..=opts.cruise_jitter)
        };
        trace.velocities.push(v);
        trace.frames.push(frame);
        trace.views.push(view);
        trace.poses.push(Pose {
            x,
            y: lane as f64 + 0.5,
            heading: if dir > 0 { 0.0 } else { std::f64::consts::PI },
        });

        if view.kind != SceneKind::Corridor && view.distance == 1 {
            // Distance left before entering the blocked cell.
            let boundary = if dir > 0 { cell as f64 + 1.0 } else { cell as f64 };
            let room = (boundary - x).abs() - 0.05;
            if room > v {
                x += dir as f64 * v;
            } else {
                let free = |l: usize| (0..=2).all(|k| world.hazard(cell + dir * k, l).is_none());
                let mut options: Vec<usize> = [lane.wrapping_sub(1), lane + 1]
                    .into_iter()
                    .filter(|&l| l < crate::world::LANES && free(l))
                    .collect();
                if options.is_empty() {
                    dir = -dir;
                } else {
                    options.sort_unstable();
                    lane = options[rng.random_range(0..options.len())];
                }
            }
        } else {
            x += dir as f64 * v;
        }
        x = x.rem_euclid(len);
    }
    Ok(trace)
}
