//! 8-connected A* over the master costmap.
//!
//! Moving into a cell with cost `c` costs `len * (1 + lambda * c / 253)` with
//! `len` one or `sqrt 2` cells. Edge weights are fixed-point integers
//! ([`COST_SCALE`] units per cell length) so path costs add exactly and do not
//! depend on summation order. Lethal cells are never entered and diagonal
//! moves may not cut a lethal corner.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::{Cell, Costmap, GridSpec, LETHAL};

/// Fixed-point units per cell length.
pub const COST_SCALE: f64 = 1_000_000.0;

pub const DEFAULT_COST_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Weight `lambda` of cell cost against distance.
    pub cost_weight: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            cost_weight: DEFAULT_COST_WEIGHT,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("start ({x:.3}, {y:.3}) is in a lethal cell")]
    StartInLethal { x: f64, y: f64 },
    #[error("{which} ({x:.3}, {y:.3}) is outside the grid")]
    OutOfGrid { which: &'static str, x: f64, y: f64 },
}

/// Waypoints at cell centers from start to goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<[f64; 2]>,
    pub cells: Vec<Cell>,
    /// Accumulated traversal cost in meters-equivalent.
    pub total_cost: f64,
    /// Same cost in fixed-point units; exact.
    pub cost_units: u64,
}

/// Fixed-point weight of a step of `diagonal` kind into a cell of cost `c`.
pub fn step_weight(diagonal: bool, c: u8, cost_weight: f64) -> u64 {
    let len = if diagonal {
        std::f64::consts::SQRT_2
    } else {
        1.0
    };
    (COST_SCALE * len * (1.0 + cost_weight * c as f64 / 253.0)).round() as u64
}

fn heuristic(a: Cell, b: Cell) -> u64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    (COST_SCALE * dx.hypot(dy)).floor() as u64
}

pub const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Legal moves out of `cell` with their fixed-point weights.
pub fn successors<'a>(
    spec: &GridSpec,
    cells: &'a [u8],
    cell: Cell,
    cost_weight: f64,
) -> impl Iterator<Item = (Cell, u64)> + 'a {
    let (w, h) = (spec.width as i64, spec.height as i64);
    let lethal = move |i: i64, j: i64| cells[(j * w + i) as usize] >= LETHAL;
    NEIGHBORS.iter().filter_map(move |&(di, dj)| {
        let (i, j) = (cell.0 as i64 + di, cell.1 as i64 + dj);
        if i < 0 || j < 0 || i >= w || j >= h || lethal(i, j) {
            return None;
        }
        let diagonal = di != 0 && dj != 0;
        if diagonal
            && (lethal(cell.0 as i64 + di, cell.1 as i64)
                || lethal(cell.0 as i64, cell.1 as i64 + dj))
        {
            return None;
        }
        let c = cells[(j * w + i) as usize];
        Some((
            (i as usize, j as usize),
            step_weight(diagonal, c, cost_weight),
        ))
    })
}

#[derive(Debug, PartialEq, Eq)]
struct Entry {
    f: u64,
    g: u64,
    index: usize,
}

impl Ord for Entry {
    // max-heap: smallest f first, then largest g, then smallest index
    fn cmp(&self, other: &Self) -> Ordering {
        Reverse(self.f)
            .cmp(&Reverse(other.f))
            .then(self.g.cmp(&other.g))
            .then(Reverse(self.index).cmp(&Reverse(other.index)))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* on a raw cost grid. `Ok(None)` is NoPath.
pub fn plan_cells(
    spec: &GridSpec,
    cells: &[u8],
    start: Cell,
    goal: Cell,
    config: &PlannerConfig,
) -> Option<(Vec<Cell>, u64)> {
    let n = spec.len();
    let si = spec.index(start);
    let gi = spec.index(goal);
    if cells[gi] >= LETHAL {
        return None;
    }
    let mut g_score = vec![u64::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g_score[si] = 0;
    open.push(Entry {
        f: heuristic(start, goal),
        g: 0,
        index: si,
    });
    while let Some(Entry { g, index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == gi {
            let mut path = vec![goal];
            let mut k = gi;
            while k != si {
                k = parent[k];
                path.push(spec.cell_of(k));
            }
            path.reverse();
            return Some((path, g));
        }
        let cell = spec.cell_of(index);
        for (next, w) in successors(spec, cells, cell, config.cost_weight) {
            let k = spec.index(next);
            if closed[k] {
                continue;
            }
            let ng = g + w;
            if ng < g_score[k] {
                g_score[k] = ng;
                parent[k] = index;
                open.push(Entry {
                    f: ng + heuristic(next, goal),
                    g: ng,
                    index: k,
                });
            }
        }
    }
    None
}

/// Plans from `start` to `goal` (world meters) on the master grid.
pub fn plan(
    map: &Costmap,
    start: [f64; 2],
    goal: [f64; 2],
    config: &PlannerConfig,
) -> Result<Option<Path>, PlanError> {
    let spec = map.spec();
    let start_cell = spec
        .world_to_cell(start[0], start[1])
        .ok_or(PlanError::OutOfGrid {
            which: "start",
            x: start[0],
            y: start[1],
        })?;
    let goal_cell = spec
        .world_to_cell(goal[0], goal[1])
        .ok_or(PlanError::OutOfGrid {
            which: "goal",
            x: goal[0],
            y: goal[1],
        })?;
    if map.cost(start_cell) >= LETHAL {
        return Err(PlanError::StartInLethal {
            x: start[0],
            y: start[1],
        });
    }
    Ok(
        plan_cells(spec, map.master(), start_cell, goal_cell, config).map(|(cells, units)| Path {
            waypoints: cells
                .iter()
                .map(|&c| {
                    let (x, y) = spec.cell_center(c);
                    [x, y]
                })
                .collect(),
            cells,
            total_cost: units as f64 / COST_SCALE * spec.resolution,
            cost_units: units,
        }),
    )
}
