//! A* over the 8-connected cost grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::Result;
use crate::grid::{Cell, Costmap, DEFAULT_LETHAL_CUTOFF, LETHAL};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanRequest {
    pub start: Cell,
    pub goal: Cell,
    /// Cells at or above this cost are impassable.
    pub lethal_cutoff: u8,
    /// Scale of the cell-cost term added to each step.
    pub cost_weight: f64,
}

impl PlanRequest {
    pub fn new(start: Cell, goal: Cell) -> Self {
        Self {
            start,
            goal,
            lethal_cutoff: DEFAULT_LETHAL_CUTOFF,
            cost_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    /// Start to goal inclusive.
    pub cells: Vec<Cell>,
    pub cost: f64,
}

pub const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

pub fn passable(map: &Costmap, c: Cell, cutoff: u8) -> bool {
    map.cost(c) < cutoff
}

/// Neighbours reachable in one step with the step's cost. Diagonal steps
/// must not cut the corner of an impassable cell.
pub fn successors(map: &Costmap, c: Cell, req: &PlanRequest) -> Vec<(Cell, f64)> {
    let at = |dx: i64, dy: i64| -> Option<Cell> {
        let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
        (x >= 0 && y >= 0 && (x as usize) < map.width() && (y as usize) < map.height())
            .then(|| Cell::new(x as usize, y as usize))
    };
    let open = |cell: Option<Cell>| cell.is_some_and(|n| passable(map, n, req.lethal_cutoff));
    NEIGHBORS
        .iter()
        .filter_map(|&(dx, dy)| {
            let n = at(dx, dy)?;
            if !open(Some(n)) {
                return None;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !(open(at(dx, 0)) && open(at(0, dy))) {
                return None;
            }
            let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
            Some((n, step + req.cost_weight * f64::from(map.cost(n)) / f64::from(LETHAL)))
        })
        .collect()
}

fn euclid(a: Cell, b: Cell) -> f64 {
    let dx = a.x as f64 - b.x as f64;
    let dy = a.y as f64 - b.y as f64;
    (dx * dx + dy * dy).sqrt()
}

#[derive(PartialEq)]
struct Entry {
    f: f64,
    g: f64,
    order: u64,
    cell: Cell,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on f, then larger g, then insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cheapest path under the request's metric, or `None` when the goal cannot
/// be reached or either end is impassable.
pub fn plan(map: &Costmap, req: &PlanRequest) -> Result<Option<Path>> {
    map.check(req.start)?;
    map.check(req.goal)?;
    if !passable(map, req.start, req.lethal_cutoff) || !passable(map, req.goal, req.lethal_cutoff) {
        return Ok(None);
    }
    let idx = |c: Cell| c.y * map.width() + c.x;
    let n = map.width() * map.height();
    let mut g = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<Cell>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    g[idx(req.start)] = 0.0;
    heap.push(Entry {
        f: euclid(req.start, req.goal),
        g: 0.0,
        order,
        cell: req.start,
    });
    while let Some(Entry { g: gc, cell, .. }) = heap.pop() {
        if closed[idx(cell)] {
            continue;
        }
        closed[idx(cell)] = true;
        if cell == req.goal {
            let mut cells = vec![cell];
            let mut cur = cell;
            while let Some(p) = parent[idx(cur)] {
                cells.push(p);
                cur = p;
            }
            cells.reverse();
            return Ok(Some(Path { cells, cost: gc }));
        }
        for (nb, step) in successors(map, cell, req) {
            let cand = gc + step;
            if !closed[idx(nb)] && cand < g[idx(nb)] {
                g[idx(nb)] = cand;
                parent[idx(nb)] = Some(cell);
                order += 1;
                heap.push(Entry {
                    f: cand + euclid(nb, req.goal),
                    g: cand,
                    order,
                    cell: nb,
                });
            }
        }
    }
    Ok(None)
}
