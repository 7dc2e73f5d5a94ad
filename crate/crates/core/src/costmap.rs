//! Layered action-aware costmap.
//!
//! Layers:
//! - static: the scenario map, never touched by sensor updates;
//! - obstacle: LiDAR marks (`LETHAL`) and ray-trace clearing (`FREESPACE`);
//! - override: cells whose latest classification was traversable.
//!
//! The master grid is `max(static, inflate(lethal cells))` with overridden
//! cells forced to [`FREESPACE`]. Cells are indexed row-major with row `j`
//! covering world `y` in `[origin.y + j*res, origin.y + (j+1)*res)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planar::{Polygon, Pose2};
use crate::segmentation::{PointCloud, SegmentedCloud};

pub const FREESPACE: u8 = 0;
pub const LETHAL: u8 = 254;
/// Cost right next to a lethal cell.
pub const INSCRIBED: u8 = 253;

pub const DEFAULT_RESOLUTION: f64 = 0.05;
pub const DEFAULT_INFLATION_RADIUS: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostmapError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("robot pose ({x:.3}, {y:.3}) is outside the grid")]
    PoseOutsideGrid { x: f64, y: f64 },
    #[error("layer has {got} cells, grid needs {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("invalid PGM: {0}")]
    Pgm(String),
}

/// Grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
}

/// Grid cell as (column, row).
pub type Cell = (usize, usize);

impl GridSpec {
    pub fn new(
        resolution: f64,
        origin: [f64; 2],
        width: usize,
        height: usize,
    ) -> Result<Self, CostmapError> {
        let spec = Self {
            resolution,
            origin,
            width,
            height,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Smallest grid covering the rectangle `[min, max]`.
    pub fn covering(min: [f64; 2], max: [f64; 2], resolution: f64) -> Result<Self, CostmapError> {
        let cells = |span: f64| ((span / resolution) - 1e-9).ceil().max(1.0) as usize;
        Self::new(
            resolution,
            min,
            cells(max[0] - min[0]),
            cells(max[1] - min[1]),
        )
    }

    pub fn validate(&self) -> Result<(), CostmapError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(CostmapError::InvalidGrid(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CostmapError::InvalidGrid(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(CostmapError::InvalidGrid("origin is not finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.1 * self.width + cell.0
    }

    pub fn cell_of(&self, index: usize) -> Cell {
        (index % self.width, index / self.width)
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<Cell> {
        let fx = ((x - self.origin[0]) / self.resolution).floor();
        let fy = ((y - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, cell: Cell) -> (f64, f64) {
        (
            self.origin[0] + (cell.0 as f64 + 0.5) * self.resolution,
            self.origin[1] + (cell.1 as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_bounds(&self, cell: Cell) -> ([f64; 2], [f64; 2]) {
        let lo = [
            self.origin[0] + cell.0 as f64 * self.resolution,
            self.origin[1] + cell.1 as f64 * self.resolution,
        ];
        (lo, [lo[0] + self.resolution, lo[1] + self.resolution])
    }
}

/// Cost-versus-distance profile used by [`inflate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Decay {
    /// 253 next to the obstacle, falling linearly to 1 at the radius.
    #[default]
    Linear,
}

impl Decay {
    pub fn cost(&self, distance: f64, radius: f64) -> u8 {
        match self {
            Decay::Linear => {
                if radius <= 0.0 {
                    return INSCRIBED;
                }
                let c = INSCRIBED as f64 - (INSCRIBED as f64 - 1.0) * distance / radius;
                c.round().clamp(1.0, INSCRIBED as f64) as u8
            }
        }
    }
}

/// Spreads cost around every `LETHAL` cell of `layer`.
///
/// Each cell within `radius` (center-to-center) of a lethal cell becomes
/// `max(current, decay(distance))`; lethal cells stay lethal.
pub fn inflate(layer: &[u8], spec: &GridSpec, radius: f64, decay: Decay) -> Vec<u8> {
    let mut out = layer.to_vec();
    if radius <= 0.0 {
        return out;
    }
    let reach = (radius / spec.resolution + 1e-9).floor() as i64;
    let mut stencil = Vec::new();
    for dj in -reach..=reach {
        for di in -reach..=reach {
            if di == 0 && dj == 0 {
                continue;
            }
            let d = spec.resolution * ((di * di + dj * dj) as f64).sqrt();
            if d <= radius + 1e-9 {
                stencil.push((di, dj, decay.cost(d, radius)));
            }
        }
    }
    let (w, h) = (spec.width as i64, spec.height as i64);
    for (idx, &c) in layer.iter().enumerate() {
        if c != LETHAL {
            continue;
        }
        let (ci, cj) = spec.cell_of(idx);
        for &(di, dj, cost) in &stencil {
            let (i, j) = (ci as i64 + di, cj as i64 + dj);
            if i < 0 || j < 0 || i >= w || j >= h {
                continue;
            }
            let k = (j * w + i) as usize;
            if out[k] < cost {
                out[k] = cost;
            }
        }
    }
    out
}

/// Cells visited by the integer line from `from` (included) to `to`
/// (excluded).
pub fn trace_line(from: Cell, to: Cell) -> Vec<Cell> {
    let (x0, y0) = (from.0 as i64, from.1 as i64);
    let (x1, y1) = (to.0 as i64, to.1 as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    while (x, y) != (x1, y1) {
        out.push((x as usize, y as usize));
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Static layer from map polygons: a cell is lethal when it meets a polygon.
pub fn rasterize_static(spec: &GridSpec, polygons: &[Polygon]) -> Vec<u8> {
    let mut layer = vec![FREESPACE; spec.len()];
    for poly in polygons {
        let (lo, hi) = poly.bounds();
        let Some((a, b)) = cell_range(spec, lo, hi) else {
            continue;
        };
        for j in a.1..=b.1 {
            for i in a.0..=b.0 {
                let (clo, chi) = spec.cell_bounds((i, j));
                // shrink a hair so polygons that only touch a cell's edge skip it
                let eps = spec.resolution * 1e-6;
                if poly.overlaps_rect([clo[0] + eps, clo[1] + eps], [chi[0] - eps, chi[1] - eps]) {
                    layer[spec.index((i, j))] = LETHAL;
                }
            }
        }
    }
    layer
}

/// Cells overlapping the world rectangle `[lo, hi]`, clipped to the grid.
fn cell_range(spec: &GridSpec, lo: [f64; 2], hi: [f64; 2]) -> Option<(Cell, Cell)> {
    let axis = |lo: f64, hi: f64, origin: f64, n: usize| {
        let a = ((lo - origin) / spec.resolution).floor();
        let b = ((hi - origin) / spec.resolution).floor();
        if b < 0.0 || a >= n as f64 {
            return None;
        }
        Some((a.max(0.0) as usize, b.min(n as f64 - 1.0) as usize))
    };
    let (i0, i1) = axis(lo[0], hi[0], spec.origin[0], spec.width)?;
    let (j0, j1) = axis(lo[1], hi[1], spec.origin[1], spec.height)?;
    Some(((i0, j0), (i1, j1)))
}

/// Action-aware layered costmap `M_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Costmap {
    spec: GridSpec,
    inflation_radius: f64,
    decay: Decay,
    static_layer: Vec<u8>,
    obstacle: Vec<u8>,
    overrides: Vec<bool>,
    master: Vec<u8>,
}

impl Costmap {
    pub fn new(spec: GridSpec, inflation_radius: f64) -> Self {
        Self::with_static(spec, vec![FREESPACE; spec.len()], inflation_radius)
            .expect("layer sized from spec")
    }

    pub fn with_static(
        spec: GridSpec,
        static_layer: Vec<u8>,
        inflation_radius: f64,
    ) -> Result<Self, CostmapError> {
        spec.validate()?;
        if static_layer.len() != spec.len() {
            return Err(CostmapError::SizeMismatch {
                got: static_layer.len(),
                want: spec.len(),
            });
        }
        let mut map = Self {
            spec,
            inflation_radius: inflation_radius.max(0.0),
            decay: Decay::Linear,
            static_layer: static_layer.into_iter().map(|c| c.min(LETHAL)).collect(),
            obstacle: vec![FREESPACE; spec.len()],
            overrides: vec![false; spec.len()],
            master: Vec::new(),
        };
        map.recompute_master();
        Ok(map)
    }

    /// A map whose only content is a finished master grid (e.g. read back
    /// from a PGM export).
    pub fn from_master(spec: GridSpec, master: Vec<u8>) -> Result<Self, CostmapError> {
        Self::with_static(spec, master, 0.0)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn inflation_radius(&self) -> f64 {
        self.inflation_radius
    }

    pub fn master(&self) -> &[u8] {
        &self.master
    }

    pub fn static_layer(&self) -> &[u8] {
        &self.static_layer
    }

    pub fn obstacle_layer(&self) -> &[u8] {
        &self.obstacle
    }

    pub fn override_layer(&self) -> &[bool] {
        &self.overrides
    }

    pub fn cost(&self, cell: Cell) -> u8 {
        self.master[self.spec.index(cell)]
    }

    pub fn cost_at(&self, x: f64, y: f64) -> Option<u8> {
        self.spec.world_to_cell(x, y).map(|c| self.cost(c))
    }

    /// Lethal cells that are not overridden; the seeds of inflation.
    pub fn lethal_sources(&self) -> Vec<u8> {
        (0..self.spec.len())
            .map(|i| {
                let lethal = self.static_layer[i] == LETHAL || self.obstacle[i] == LETHAL;
                if lethal && !self.overrides[i] {
                    LETHAL
                } else {
                    FREESPACE
                }
            })
            .collect()
    }

    /// Inflation layer as combined into the master.
    pub fn inflation_layer(&self) -> Vec<u8> {
        inflate(
            &self.lethal_sources(),
            &self.spec,
            self.inflation_radius,
            self.decay,
        )
    }

    fn recompute_master(&mut self) {
        let inflated = self.inflation_layer();
        self.master = (0..self.spec.len())
            .map(|i| {
                if self.overrides[i] {
                    FREESPACE
                } else {
                    self.static_layer[i].max(inflated[i])
                }
            })
            .collect();
    }

    fn apply_scan(
        &self,
        seg: &SegmentedCloud,
        cloud: &PointCloud,
        robot_pose: &Pose2,
        lidar_to_world: &Pose2,
        keeps_override: impl Fn(usize) -> bool,
    ) -> Result<Costmap, CostmapError> {
        if self
            .spec
            .world_to_cell(robot_pose.x, robot_pose.y)
            .is_none()
        {
            return Err(CostmapError::PoseOutsideGrid {
                x: robot_pose.x,
                y: robot_pose.y,
            });
        }
        let sensor = self
            .spec
            .world_to_cell(lidar_to_world.x, lidar_to_world.y)
            .ok_or(CostmapError::PoseOutsideGrid {
                x: lidar_to_world.x,
                y: lidar_to_world.y,
            })?;
        let cell_of = |i: usize| {
            cloud.points.get(i).and_then(|p| {
                let (wx, wy) = lidar_to_world.transform_point(p.x, p.y);
                self.spec.world_to_cell(wx, wy)
            })
        };
        let tra: Vec<Cell> = seg.traversable.iter().filter_map(|&i| cell_of(i)).collect();
        let untra: Vec<(Cell, bool)> = seg
            .untraversable
            .iter()
            .filter_map(|&i| cell_of(i).map(|c| (c, keeps_override(i))))
            .collect();

        let mut next = self.clone();
        for &hit in tra.iter().chain(untra.iter().map(|(c, _)| c)) {
            for c in trace_line(sensor, hit) {
                next.obstacle[self.spec.index(c)] = FREESPACE;
            }
        }
        for &c in &tra {
            let k = self.spec.index(c);
            next.overrides[k] = true;
            next.obstacle[k] = FREESPACE;
        }
        // untraversable marks go last so they win within a scan
        for &(c, keep) in &untra {
            let k = self.spec.index(c);
            next.obstacle[k] = LETHAL;
            if !keep {
                next.overrides[k] = false;
            }
        }
        next.recompute_master();
        Ok(next)
    }

    /// One segmented scan: clear along beams, mark untraversable returns
    /// lethal, override traversable returns to free space. `self` is left
    /// untouched.
    pub fn update(
        &self,
        seg: &SegmentedCloud,
        cloud: &PointCloud,
        robot_pose: &Pose2,
        lidar_to_world: &Pose2,
    ) -> Result<Costmap, CostmapError> {
        self.apply_scan(seg, cloud, robot_pose, lidar_to_world, |_| false)
    }

    /// [`Costmap::update`] for a camera that saw only part of the scan.
    /// Untraversable returns with `in_view[i] == false` carry no semantic
    /// evidence, so like the fallback they mark lethal but leave an existing
    /// override in place.
    pub fn update_in_view(
        &self,
        seg: &SegmentedCloud,
        cloud: &PointCloud,
        robot_pose: &Pose2,
        lidar_to_world: &Pose2,
        in_view: &[bool],
    ) -> Result<Costmap, CostmapError> {
        self.apply_scan(seg, cloud, robot_pose, lidar_to_world, |i| {
            !in_view.get(i).copied().unwrap_or(false)
        })
    }

    /// Scan with no box information: every return is marked, existing
    /// overrides persist.
    pub fn update_fallback(
        &self,
        cloud: &PointCloud,
        robot_pose: &Pose2,
        lidar_to_world: &Pose2,
    ) -> Result<Costmap, CostmapError> {
        let seg = SegmentedCloud::all_untraversable(cloud.len());
        self.apply_scan(&seg, cloud, robot_pose, lidar_to_world, |_| true)
    }
}

/// Free-function form of [`Costmap::update`].
pub fn update_costmap(
    prev: &Costmap,
    seg: &SegmentedCloud,
    cloud: &PointCloud,
    robot_pose: &Pose2,
    lidar_to_world: &Pose2,
) -> Result<Costmap, CostmapError> {
    prev.update(seg, cloud, robot_pose, lidar_to_world)
}

/// Free-function form of [`Costmap::update_fallback`].
pub fn update_costmap_fallback(
    prev: &Costmap,
    cloud: &PointCloud,
    robot_pose: &Pose2,
    lidar_to_world: &Pose2,
) -> Result<Costmap, CostmapError> {
    prev.update_fallback(cloud, robot_pose, lidar_to_world)
}

/// Gray level for a cost: 254 is black, 0 is white.
pub fn cost_to_gray(cost: u8) -> u8 {
    let c = cost.min(LETHAL) as f64;
    (255.0 * (254.0 - c) / 254.0).round() as u8
}

pub fn gray_to_cost(gray: u8) -> u8 {
    (254.0 * (255.0 - gray as f64) / 255.0).round() as u8
}

/// Binary PGM (P5) of a master grid; the top image row is the highest `y`.
pub fn encode_pgm(spec: &GridSpec, cells: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", spec.width, spec.height).into_bytes();
    for j in (0..spec.height).rev() {
        out.extend(
            cells[j * spec.width..(j + 1) * spec.width]
                .iter()
                .map(|&c| cost_to_gray(c)),
        );
    }
    out
}

/// Reads a P5 image written by [`encode_pgm`] back into costs.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), CostmapError> {
    let err = |m: &str| CostmapError::Pgm(m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("bad header"))?);
    }
    if fields[0] != "P5" {
        return Err(err("not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| err("bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(err("only 8-bit PGM is supported"));
    }
    pos += 1;
    let data = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| err("truncated pixel data"))?;
    let mut cells = vec![0u8; w * h];
    for (row, chunk) in data.chunks(w).enumerate() {
        let j = h - 1 - row;
        for (i, &g) in chunk.iter().enumerate() {
            cells[j * w + i] = gray_to_cost(g);
        }
    }
    Ok((w, h, cells))
}

impl Costmap {
    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(&self.spec, &self.master)
    }

    /// Sidecar metadata for [`Costmap::to_pgm`].
    pub fn meta_json(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("grid spec serializes")
    }

    pub fn from_pgm(pgm: &[u8], meta_json: &str) -> Result<Self, CostmapError> {
        let spec: GridSpec = serde_json::from_str(meta_json)
            .map_err(|e| CostmapError::InvalidGrid(e.to_string()))?;
        let (w, h, cells) = decode_pgm(pgm)?;
        if (w, h) != (spec.width, spec.height) {
            return Err(CostmapError::Pgm(format!(
                "image is {w}x{h} but metadata says {}x{}",
                spec.width, spec.height
            )));
        }
        Self::from_master(spec, cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LidarPoint;
    use proptest::prelude::*;

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::new(0.1, [0.0, 0.0], w, h).unwrap()
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridSpec::new(0.0, [0.0, 0.0], 1, 1).is_err());
        assert!(GridSpec::new(0.1, [0.0, 0.0], 0, 1).is_err());
        let s = GridSpec::covering([0.0, 0.0], [4.0, 6.0], 0.05).unwrap();
        assert_eq!((s.width, s.height), (80, 120));
        assert_eq!(s.world_to_cell(3.999, 5.999), Some((79, 119)));
        assert_eq!(s.world_to_cell(4.0, 1.0), None);
        assert_eq!(s.world_to_cell(-0.001, 1.0), None);
    }

    #[test]
    fn zero_radius_inflation_is_identity() {
        let s = spec(5, 5);
        let mut layer = vec![0u8; 25];
        layer[12] = LETHAL;
        layer[3] = 40;
        assert_eq!(inflate(&layer, &s, 0.0, Decay::Linear), layer);
    }

    #[test]
    fn single_cell_inflation_profile() {
        // radius = 2 * resolution: d=0.1 -> 253 - 252/2 = 127,
        // d=0.1*sqrt2 -> 253 - 252*0.7071 = 74.8 -> 75, d=0.2 -> 1
        let s = spec(5, 5);
        let mut layer = vec![0u8; 25];
        layer[s.index((2, 2))] = LETHAL;
        let out = inflate(&layer, &s, 0.2, Decay::Linear);
        #[rustfmt::skip]
        let expected: [u8; 25] = [
            0,  0,   1,  0,  0,
            0, 75, 127, 75,  0,
            1, 127, 254, 127, 1,
            0, 75, 127, 75,  0,
            0,  0,   1,  0,  0,
        ];
        assert_eq!(out, expected.to_vec());
    }

    #[test]
    fn trace_line_excludes_endpoint() {
        assert_eq!(trace_line((0, 0), (0, 0)), vec![]);
        assert_eq!(trace_line((0, 0), (3, 0)), vec![(0, 0), (1, 0), (2, 0)]);
        assert_eq!(trace_line((0, 0), (2, 2)), vec![(0, 0), (1, 1)]);
        assert_eq!(trace_line((3, 1), (0, 0)).len(), 3);
    }

    fn pts(v: &[(f64, f64)]) -> PointCloud {
        PointCloud::new(
            v.iter().map(|&(x, y)| LidarPoint::new(x, y, 0.0)).collect(),
            0.0,
        )
    }

    #[test]
    fn untraversable_point_marks_lethal() {
        let map = Costmap::new(spec(10, 10), 0.0);
        let pose = Pose2::new(0.05, 0.05, 0.0);
        let cloud = pts(&[(0.5, 0.0)]);
        let next = map
            .update(&SegmentedCloud::all_untraversable(1), &cloud, &pose, &pose)
            .unwrap();
        assert_eq!(next.cost_at(0.55, 0.05), Some(LETHAL));
        assert_eq!(map.cost_at(0.55, 0.05), Some(FREESPACE));
    }

    #[test]
    fn traversable_point_clears_lethal() {
        let map = Costmap::new(spec(10, 10), 0.2);
        let pose = Pose2::new(0.05, 0.05, 0.0);
        let cloud = pts(&[(0.5, 0.0)]);
        let marked = map
            .update(&SegmentedCloud::all_untraversable(1), &cloud, &pose, &pose)
            .unwrap();
        let seg = SegmentedCloud {
            traversable: vec![0],
            untraversable: vec![],
        };
        let cleared = marked.update(&seg, &cloud, &pose, &pose).unwrap();
        assert_eq!(cleared.cost_at(0.55, 0.05), Some(FREESPACE));
        assert!(cleared.master().iter().all(|&c| c == FREESPACE));
    }

    #[test]
    fn override_next_to_lethal_stays_free() {
        let s = spec(3, 3);
        let mut stat = vec![0u8; 9];
        stat[s.index((0, 1))] = LETHAL;
        let map = Costmap::with_static(s, stat, 0.15).unwrap();
        assert!(map.cost((1, 1)) > 0);
        let pose = Pose2::new(0.25, 0.05, 0.0);
        let cloud = pts(&[(-0.1, 0.1)]);
        let seg = SegmentedCloud {
            traversable: vec![0],
            untraversable: vec![],
        };
        let next = map.update(&seg, &cloud, &pose, &pose).unwrap();
        assert_eq!(next.cost((1, 1)), FREESPACE);
        assert_eq!(next.cost((0, 1)), LETHAL);
    }

    #[test]
    fn static_cells_survive_clearing() {
        let s = spec(10, 1);
        let mut stat = vec![0u8; 10];
        stat[4] = LETHAL;
        let map = Costmap::with_static(s, stat, 0.0).unwrap();
        let pose = Pose2::new(0.05, 0.05, 0.0);
        let next = map
            .update_fallback(&pts(&[(0.8, 0.0)]), &pose, &pose)
            .unwrap();
        assert_eq!(next.cost((4, 0)), LETHAL);
        assert_eq!(next.cost((8, 0)), LETHAL);
    }

    #[test]
    fn fallback_keeps_overrides() {
        let map = Costmap::new(spec(10, 10), 0.0);
        let pose = Pose2::new(0.05, 0.05, 0.0);
        let cloud = pts(&[(0.5, 0.0), (0.0, 0.5)]);
        let seg = SegmentedCloud {
            traversable: vec![0],
            untraversable: vec![1],
        };
        let a = map.update(&seg, &cloud, &pose, &pose).unwrap();
        let b = a.update_fallback(&cloud, &pose, &pose).unwrap();
        assert_eq!(b.cost_at(0.55, 0.05), Some(FREESPACE));
        assert_eq!(b.cost_at(0.05, 0.55), Some(LETHAL));
        // an explicit untraversable classification does re-mark it
        let c = b
            .update(&SegmentedCloud::all_untraversable(2), &cloud, &pose, &pose)
            .unwrap();
        assert_eq!(c.cost_at(0.55, 0.05), Some(LETHAL));
    }

    #[test]
    fn unseen_returns_keep_overrides() {
        let map = Costmap::new(spec(10, 10), 0.0);
        let pose = Pose2::new(0.05, 0.05, 0.0);
        let cloud = pts(&[(0.5, 0.0), (0.0, 0.5)]);
        let seg = SegmentedCloud {
            traversable: vec![0, 1],
            untraversable: vec![],
        };
        let a = map.update(&seg, &cloud, &pose, &pose).unwrap();
        let all = SegmentedCloud::all_untraversable(2);
        let b = a
            .update_in_view(&all, &cloud, &pose, &pose, &[false, true])
            .unwrap();
        assert_eq!(b.cost_at(0.55, 0.05), Some(FREESPACE));
        assert_eq!(b.cost_at(0.05, 0.55), Some(LETHAL));
        assert_eq!(
            a.update_in_view(&all, &cloud, &pose, &pose, &[true, true])
                .unwrap(),
            a.update(&all, &cloud, &pose, &pose).unwrap()
        );
    }

    #[test]
    fn empty_scan_is_a_no_op() {
        let map = Costmap::new(spec(10, 10), 0.2);
        let pose = Pose2::new(0.05, 0.05, 0.0);
        let empty = PointCloud::default();
        assert_eq!(map.update_fallback(&empty, &pose, &pose).unwrap(), map);
        assert_eq!(
            map.update(&SegmentedCloud::default(), &empty, &pose, &pose)
                .unwrap(),
            map
        );
    }

    #[test]
    fn pose_outside_grid_is_rejected() {
        let map = Costmap::new(spec(10, 10), 0.2);
        let pose = Pose2::new(5.0, 0.05, 0.0);
        assert!(matches!(
            map.update_fallback(&PointCloud::default(), &pose, &pose),
            Err(CostmapError::PoseOutsideGrid { .. })
        ));
    }

    #[test]
    fn points_outside_grid_are_discarded() {
        let map = Costmap::new(spec(10, 10), 0.0);
        let pose = Pose2::new(0.05, 0.05, 0.0);
        let next = map
            .update_fallback(&pts(&[(50.0, 0.0), (-3.0, 0.0)]), &pose, &pose)
            .unwrap();
        assert_eq!(next, map);
    }

    #[test]
    fn rasterized_rect_is_tight() {
        let s = spec(10, 10);
        let layer = rasterize_static(&s, &[Polygon::rect(0.2, 0.2, 0.4, 0.3)]);
        let lethal: Vec<Cell> = (0..s.len())
            .filter(|&k| layer[k] == LETHAL)
            .map(|k| s.cell_of(k))
            .collect();
        assert_eq!(lethal, vec![(2, 2), (3, 2)]);
    }

    #[test]
    fn pgm_round_trip() {
        let s = spec(4, 3);
        let cells: Vec<u8> = vec![0, 1, 2, 127, 128, 200, 252, 253, 254, 10, 20, 30];
        let map = Costmap::from_master(s, cells.clone()).unwrap();
        let pgm = map.to_pgm();
        assert!(pgm.starts_with(b"P5\n4 3\n255\n"));
        // row 0 (lowest y) is written last
        assert_eq!(*pgm.last().unwrap(), cost_to_gray(127));
        let back = Costmap::from_pgm(&pgm, &map.meta_json()).unwrap();
        assert_eq!(back.master(), &cells[..]);
        assert_eq!(cost_to_gray(LETHAL), 0);
        assert_eq!(cost_to_gray(FREESPACE), 255);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    proptest! {
        #[test]
        fn gray_mapping_is_invertible(c in 0u8..=254) {
            prop_assert_eq!(gray_to_cost(cost_to_gray(c)), c);
        }

        #[test]
        fn update_is_idempotent_and_in_range(
            raw in prop::collection::vec((-1.5..1.5f64, -1.5..1.5f64, any::<bool>()), 0..60),
            sx in 0.0..2.0f64, sy in 0.0..2.0f64,
        ) {
            let map = Costmap::new(GridSpec::new(0.1, [-1.0, -1.0], 30, 30).unwrap(), 0.25);
            let pose = Pose2::new(sx - 1.0 + 0.01, sy - 1.0 + 0.01, 0.3);
            let cloud = PointCloud::new(raw.iter().map(|&(x, y, _)| LidarPoint::new(x, y, 0.0)).collect(), 0.0);
            let mut seg = SegmentedCloud::default();
            for (i, &(_, _, t)) in raw.iter().enumerate() {
                if t { seg.traversable.push(i) } else { seg.untraversable.push(i) }
            }
            let once = map.update(&seg, &cloud, &pose, &pose).unwrap();
            let twice = once.update(&seg, &cloud, &pose, &pose).unwrap();
            prop_assert_eq!(once.master(), twice.master());
            prop_assert!(once.master().iter().all(|&c| c <= LETHAL));
        }
    }
}
