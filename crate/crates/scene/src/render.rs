//! Perspective corridor scenes seen from a ground robot's camera.

use gonogo_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::pnm::{from_byte, to_byte};

pub const SUPPORTED_SIDES: [usize; 5] = [8, 16, 32, 64, 128];
pub const MAX_NOISE: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Corridor,
    /// A box standing on the floor.
    Obstacle,
    /// The floor ends in a drop.
    Edge,
}

/// Brightness ranges of the corridor surfaces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub floor: (f32, f32),
    pub wall: (f32, f32),
    pub ceiling: (f32, f32),
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            floor: (0.30, 0.50),
            wall: (0.55, 0.75),
            ceiling: (0.75, 0.92),
        }
    }
}

/// Obstacle footprint as fractions of the image, for an obstacle one cell ahead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleRanges {
    pub width: (f32, f32),
    pub height: (f32, f32),
    pub center: (f32, f32),
}

impl Default for ObstacleRanges {
    fn default() -> Self {
        Self {
            width: (0.30, 0.55),
            height: (0.25, 0.45),
            center: (0.35, 0.65),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    /// Image height and width.
    pub side: usize,
    pub kind: SceneKind,
    /// Cells between camera and hazard. 1 means the next cell, which blocks
    /// the robot; farther hazards are drawn smaller and higher up.
    pub distance: u32,
    pub noise: f32,
    pub palette: Palette,
    pub obstacle: ObstacleRanges,
}

impl SceneParams {
    pub fn new(seed: u64, side: usize, kind: SceneKind) -> Self {
        Self {
            seed,
            side,
            kind,
            distance: 1,
            noise: 0.03,
            palette: Palette::default(),
            obstacle: ObstacleRanges::default(),
        }
    }

    pub fn at_distance(mut self, distance: u32) -> Self {
        self.distance = distance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SceneError::InvalidParams(m));
        if !SUPPORTED_SIDES.contains(&self.side) {
            return bad(format!("side {} not in {SUPPORTED_SIDES:?}", self.side));
        }
        if !(0.0..=MAX_NOISE).contains(&self.noise) {
            return bad(format!("noise {} outside [0, {MAX_NOISE}]", self.noise));
        }
        if self.distance == 0 {
            return bad("hazard distance must be at least one cell".into());
        }
        let p = &self.palette;
        let o = &self.obstacle;
        for (name, (lo, hi)) in [
            ("palette.floor", p.floor),
            ("palette.wall", p.wall),
            ("palette.ceiling", p.ceiling),
            ("obstacle.width", o.width),
            ("obstacle.height", o.height),
            ("obstacle.center", o.center),
        ] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) must be ordered within [0, 1]"));
            }
        }
        Ok(())
    }

    /// Whether the robot may drive on: no hazard in the next cell.
    pub fn traversable(&self) -> bool {
        self.kind == SceneKind::Corridor || self.distance > 1
    }
}

const HAZARD_COLORS: [[f32; 3]; 5] = [
    [0.85, 0.15, 0.10],
    [0.10, 0.30, 0.85],
    [0.90, 0.60, 0.05],
    [0.15, 0.70, 0.20],
    [0.75, 0.10, 0.70],
];

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f32, f32)) -> f32 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Fraction of the floor depth below the horizon at which something `d`
/// cells ahead sits; 1 is the bottom image row.
fn depth_scale(d: u32) -> f32 {
    (d as f32).powf(-0.9)
}

/// Renders a `[3, side, side]` image in `[0, 1]` (multiples of 1/255) and
/// reports whether the scene is traversable.
pub fn render_scene(params: &SceneParams) -> Result<(Tensor, bool)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.side;
    let vx = 0.5 + rng.random_range(-0.08f32..0.08);
    let vy = rng.random_range(0.36f32..0.44);
    let floor_half = rng.random_range(0.32f32..0.42);
    let ceil_half = rng.random_range(0.30f32..0.42);
    let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.08f32..0.08));
    let floor = uniform(&mut rng, params.palette.floor);
    let wall = uniform(&mut rng, params.palette.wall);
    let ceiling = uniform(&mut rng, params.palette.ceiling);

    // Hazard geometry is drawn even for corridors so the noise stream stays
    // aligned across scene kinds.
    let s = depth_scale(params.distance);
    let o = &params.obstacle;
    let box_w = uniform(&mut rng, o.width) * s;
    let box_h = uniform(&mut rng, o.height) * s;
    let box_c = vx + (uniform(&mut rng, o.center) - 0.5) * s;
    let box_bottom = vy + (1.0 - vy) * s;
    let hue = HAZARD_COLORS[rng.random_range(0..HAZARD_COLORS.len())];
    let hue_gain = rng.random_range(0.8f32..1.0);
    let lip = vy + (1.0 - vy) * rng.random_range(0.82f32..0.88) * s;
    let void = rng.random_range(0.02f32..0.08);

    let mut data = vec![0.0f32; 3 * n * n];
    for r in 0..n {
        let v = (r as f32 + 0.5) / n as f32;
        for c in 0..n {
            let u = (c as f32 + 0.5) / n as f32;
            let du = (u - vx).abs();
            let mut rgb = if v >= vy {
                let t = (v - vy) / (1.0 - vy);
                if du <= t * floor_half {
                    let shade = floor * (0.75 + 0.25 * t);
                    [shade; 3]
                } else {
                    [wall * (0.85 + 0.3 * du); 3]
                }
            } else {
                let t = (vy - v) / vy;
                if du <= t * ceil_half {
                    [ceiling; 3]
                } else {
                    [wall * (0.85 + 0.3 * du); 3]
                }
            };
            for (ch, x) in rgb.iter_mut().enumerate() {
                *x *= 1.0 + tint[ch];
            }
            let on_floor = v >= vy && du <= (v - vy) / (1.0 - vy) * floor_half;
            match params.kind {
                SceneKind::Corridor => {}
                SceneKind::Obstacle => {
                    let top = box_bottom - box_h;
                    if (u - box_c).abs() <= box_w / 2.0 && v >= top && v <= box_bottom {
                        let lift = if v < top + 0.15 * box_h { 1.15 } else { 1.0 };
                        let side_shade = 1.0 - 0.3 * ((u - box_c).abs() / (box_w / 2.0)).powi(2);
                        for ch in 0..3 {
                            rgb[ch] = hue[ch] * hue_gain * lift * side_shade;
                        }
                    }
                }
                SceneKind::Edge => {
                    if on_floor {
                        if v < lip {
                            rgb = [void; 3];
                        } else if v < lip + 0.03 * s.max(0.5) {
                            rgb = [0.92, 0.85, 0.2];
                        }
                    }
                }
            }
            for ch in 0..3 {
                let jitter = if params.noise > 0.0 {
                    rng.random_range(-params.noise..=params.noise)
                } else {
                    0.0
                };
                data[(ch * n + r) * n + c] = from_byte(to_byte(rgb[ch] + jitter));
            }
        }
    }
    let img = Tensor::new(&[3, n, n], data).expect("image buffer matches its shape");
    Ok((img, params.traversable()))
}

/// Rows of the bottom `fraction` of an image of height `h`, rounded up.
pub fn bottom_band_rows(h: usize, fraction: f64) -> usize {
    ((h as f64 * fraction).ceil() as usize).clamp(1, h)
}

/// Mean over channels of the pixel variance in the bottom `fraction` band.
pub fn bottom_band_variance(img: &Tensor, fraction: f64) -> f64 {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let rows = bottom_band_rows(h, fraction);
    let mut total = 0.0;
    for ch in 0..c {
        let vals: Vec<f64> = (h - rows..h)
            .flat_map(|r| (0..w).map(move |col| (r, col)))
            .map(|(r, col)| f64::from(img.data()[(ch * h + r) * w + col]))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        total += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
    }
    total / c as f64
}
