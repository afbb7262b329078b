//! Byte cost grid fed by GO/NO GO observations.

use gonogo_core::scoring::Decision;

use crate::error::{CostmapError, Result};

pub const LETHAL: u8 = 254;
/// Highest cost inflation can assign.
pub const INSCRIBED: u8 = 253;
pub const DEFAULT_LETHAL_CUTOFF: u8 = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Pose in map coordinates: meters and radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Costmap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    costs: Vec<u8>,
    provenance: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MarkOutcome {
    Lethal(Cell),
    /// Cells whose free-space evidence was incremented.
    Free(Vec<Cell>),
    /// Pose or target outside the map; nothing changed.
    OutsideMap,
}

/// Rounds halves away from zero.
pub fn round_half_away(v: f64) -> f64 {
    v.signum() * (v.abs() + 0.5).floor()
}

impl Costmap {
    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CostmapError::InvalidParams("map dimensions must be positive".into()));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(CostmapError::InvalidParams(format!("resolution {resolution}")));
        }
        if !origin.0.is_finite() || !origin.1.is_finite() {
            return Err(CostmapError::InvalidParams("origin must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            costs: vec![0; width * height],
            provenance: vec![0; width * height],
        })
    }

    pub fn from_costs(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        costs: Vec<u8>,
    ) -> Result<Self> {
        let mut map = Self::new(width, height, resolution, origin)?;
        if costs.len() != width * height {
            return Err(CostmapError::InvalidParams(format!(
                "{} costs for a {width}×{height} map",
                costs.len()
            )));
        }
        if let Some(c) = costs.iter().find(|&&c| c > LETHAL) {
            return Err(CostmapError::InvalidParams(format!("cost {c} above {LETHAL}")));
        }
        map.costs = costs;
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn costs(&self) -> &[u8] {
        &self.costs
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn check(&self, c: Cell) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(CostmapError::OutOfBounds {
                x: c.x,
                y: c.y,
                width: self.width,
                height: self.height,
            })
        }
    }

    pub fn cost(&self, c: Cell) -> u8 {
        self.costs[self.index(c)]
    }

    pub fn provenance(&self, c: Cell) -> u32 {
        self.provenance[self.index(c)]
    }

    /// Raises a cell's cost; lower values leave it unchanged.
    pub fn raise(&mut self, c: Cell, cost: u8) {
        let i = self.index(c);
        self.costs[i] = self.costs[i].max(cost.min(LETHAL));
    }

    pub fn lethal_count(&self) -> usize {
        self.costs.iter().filter(|&&c| c == LETHAL).count()
    }

    /// Cell holding the world point, if inside the map.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<Cell> {
        // A small tolerance keeps points computed as k·resolution in cell k.
        let gx = ((x - self.origin.0) / self.resolution + 1e-9).floor();
        let gy = ((y - self.origin.1) / self.resolution + 1e-9).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.width as f64 || gy >= self.height as f64 {
            return None;
        }
        Some(Cell::new(gx as usize, gy as usize))
    }

    /// NO GO puts a lethal cell `range` meters ahead of the pose. GO counts
    /// free-space evidence on the cells of the ray and leaves costs alone.
    pub fn mark_observation(&mut self, pose: MapPose, decision: Decision, range: f64) -> MarkOutcome {
        if self.world_to_cell(pose.x, pose.y).is_none() {
            return MarkOutcome::OutsideMap;
        }
        let (dx, dy) = (pose.heading.cos(), pose.heading.sin());
        match decision {
            Decision::NoGo => match self.world_to_cell(pose.x + range * dx, pose.y + range * dy) {
                Some(c) => {
                    let i = self.index(c);
                    self.costs[i] = LETHAL;
                    self.provenance[i] += 1;
                    MarkOutcome::Lethal(c)
                }
                None => MarkOutcome::OutsideMap,
            },
            Decision::Go => {
                let samples = ((range / self.resolution) * 4.0).ceil().max(1.0) as usize;
                let mut cells: Vec<Cell> = Vec::new();
                for k in 0..=samples {
                    let t = range * k as f64 / samples as f64;
                    if let Some(c) = self.world_to_cell(pose.x + t * dx, pose.y + t * dy) {
                        if cells.last() != Some(&c) && !cells.contains(&c) {
                            cells.push(c);
                        }
                    }
                }
                for &c in &cells {
                    let i = self.index(c);
                    self.provenance[i] += 1;
                }
                MarkOutcome::Free(cells)
            }
        }
    }

    /// Spreads decaying cost around every lethal cell:
    /// `253·(1 − d/radius)` at distance `d ≤ radius`, rounded half away
    /// from zero, never lowering a cost.
    pub fn inflate(&mut self, radius: f64) -> Result<()> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(CostmapError::InvalidParams(format!("inflation radius {radius}")));
        }
        let r = radius / self.resolution;
        if r <= 0.0 {
            return Ok(());
        }
        let reach = r.floor() as i64;
        let lethal: Vec<Cell> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Cell::new(x, y)))
            .filter(|&c| self.cost(c) == LETHAL)
            .collect();
        for c in lethal {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                        continue;
                    }
                    let d = ((dx * dx + dy * dy) as f64).sqrt();
                    if d > r || d == 0.0 {
                        continue;
                    }
                    let cost = round_half_away(f64::from(INSCRIBED) * (1.0 - d / r)) as u8;
                    self.raise(Cell::new(nx as usize, ny as usize), cost);
                }
            }
        }
        Ok(())
    }
}
