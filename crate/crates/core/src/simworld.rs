//! 2D world with labelled objects, a kinematic point robot, a raycast LiDAR
//! and camera-view synthesis.
//!
//! Objects carry a ground-truth `truly_traversable` flag that only the
//! collision check reads: the LiDAR sees curtains like any other surface.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{lidar_to_optical_rotation, CameraModel, LidarPoint};
use crate::grounding::{label_matches, SceneView, Silhouette};
use crate::instruction::{Attribute, LandmarkDirective};
use crate::planar::{Polygon, Pose2};
use crate::planner::Path;
use crate::segmentation::PointCloud;

/// Camera-view samples closer than this are clipped away.
pub const CAMERA_NEAR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    #[serde(rename = "polygon")]
    pub footprint: Polygon,
    pub truly_traversable: bool,
    pub height_band: [f64; 2],
}

/// Part of the prior map: always solid, never grounded by the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticFeature {
    #[serde(default = "default_static_label")]
    pub label: String,
    pub polygon: Polygon,
}

fn default_static_label() -> String {
    "static map".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl WorldBounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    pub fn polygon(&self) -> Polygon {
        Polygon::rect(self.min[0], self.min[1], self.max[0], self.max[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub bounds: WorldBounds,
    pub static_map: Vec<StaticFeature>,
    pub objects: Vec<SceneObject>,
    boundary: Polygon,
}

impl World {
    pub fn new(
        bounds: WorldBounds,
        static_map: Vec<StaticFeature>,
        objects: Vec<SceneObject>,
    ) -> Self {
        Self {
            boundary: bounds.polygon(),
            bounds,
            static_map,
            objects,
        }
    }

    /// Nearest surface along a ray, if any lies within `max_range`.
    pub fn raycast(&self, origin: [f64; 2], angle: f64, max_range: f64) -> Option<f64> {
        let dir = [angle.cos(), angle.sin()];
        self.objects
            .iter()
            .map(|o| &o.footprint)
            .chain(self.static_map.iter().map(|s| &s.polygon))
            .chain(std::iter::once(&self.boundary))
            .filter_map(|p| p.ray_hit(origin, dir, 0.0))
            .fold(None, |best: Option<f64>, t| {
                Some(best.map_or(t, |b| b.min(t)))
            })
            .filter(|&t| t <= max_range)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub speed: f64,
}

impl RobotState {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarSpec {
    pub beam_count: usize,
    pub max_range: f64,
    /// Returns closer than this are invalid and dropped.
    pub min_range: f64,
    pub mount_height: f64,
    pub noise_sigma: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            beam_count: 360,
            max_range: 10.0,
            min_range: 0.1,
            mount_height: 0.3,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid LiDAR spec: {0}")]
    InvalidLidar(String),
}

impl LidarSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.beam_count == 0 {
            return Err(SimError::InvalidLidar(
                "beam_count must be at least 1".into(),
            ));
        }
        if !(self.max_range > 0.0) || !(self.min_range >= 0.0) || self.min_range >= self.max_range {
            return Err(SimError::InvalidLidar(format!(
                "ranges must satisfy 0 <= min < max, got [{}, {}]",
                self.min_range, self.max_range
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SimError::InvalidLidar("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// LiDAR frame in the world: the robot pose (the sensor sits on the
    /// robot's vertical axis).
    pub fn lidar_to_world(&self, robot: &RobotState) -> Pose2 {
        robot.pose()
    }
}

/// One full revolution. Points are in the LiDAR frame on its `z = 0` plane.
pub fn lidar_scan(world: &World, robot: &RobotState, spec: &LidarSpec, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma checked"));
    let mut points = Vec::with_capacity(spec.beam_count);
    for k in 0..spec.beam_count {
        let phi = std::f64::consts::TAU * k as f64 / spec.beam_count as f64;
        let Some(mut r) = world.raycast([robot.x, robot.y], robot.theta + phi, spec.max_range)
        else {
            continue;
        };
        if let Some(n) = &noise {
            r += n.sample(&mut rng);
        }
        if r < spec.min_range || r > spec.max_range {
            continue;
        }
        points.push(LidarPoint::new(r * phi.cos(), r * phi.sin(), 0.0));
    }
    PointCloud::new(points, 0.0)
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[error("collision with `{label}` at ({x:.3}, {y:.3})")]
pub struct CollisionFault {
    pub label: String,
    pub x: f64,
    pub y: f64,
    /// Whether the latest directives told the robot it could traverse it.
    pub permitted: bool,
}

/// Per-object traversal permission granted by the directives.
pub fn traversal_permissions(world: &World, directives: &[LandmarkDirective]) -> Vec<bool> {
    world
        .objects
        .iter()
        .map(|o| {
            directives
                .iter()
                .any(|d| d.attribute == Attribute::Traversable && label_matches(&d.label, &o.label))
        })
        .collect()
}

/// Distance ahead on the path used to aim the robot's heading.
pub const HEADING_LOOKAHEAD: f64 = 0.25;

fn remaining_polyline(pos: [f64; 2], waypoints: &[[f64; 2]]) -> Vec<[f64; 2]> {
    if waypoints.len() == 1 {
        return vec![pos, waypoints[0]];
    }
    let mut best = (f64::INFINITY, 0usize);
    for (k, seg) in waypoints.windows(2).enumerate() {
        let (a, b) = (seg[0], seg[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 > 0.0 {
            (((pos[0] - a[0]) * d[0] + (pos[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let dist = (pos[0] - a[0] - t * d[0]).hypot(pos[1] - a[1] - t * d[1]);
        if dist < best.0 - 1e-12 {
            best = (dist, k);
        }
    }
    std::iter::once(pos)
        .chain(waypoints[best.1 + 1..].iter().copied())
        .collect()
}

fn walk(poly: &[[f64; 2]], mut s: f64) -> [f64; 2] {
    for seg in poly.windows(2) {
        let len = (seg[1][0] - seg[0][0]).hypot(seg[1][1] - seg[0][1]);
        if s <= len && len > 0.0 {
            let t = s / len;
            return [
                seg[0][0] + t * (seg[1][0] - seg[0][0]),
                seg[0][1] + t * (seg[1][1] - seg[0][1]),
            ];
        }
        s -= len;
    }
    *poly.last().expect("polyline is non-empty")
}

/// Advances `speed * dt` along the path and checks ground-truth collisions.
///
/// The robot moves from its position toward the waypoint after the closest
/// path segment; its heading points at a spot [`HEADING_LOOKAHEAD`] ahead.
/// Entering an object that is not truly traversable, or a static map
/// feature, is a [`CollisionFault`].
pub fn step_robot(
    world: &World,
    robot: &RobotState,
    path: &Path,
    dt: f64,
    permissions: &[bool],
) -> Result<RobotState, CollisionFault> {
    if dt <= 0.0 || path.waypoints.is_empty() {
        return Ok(*robot);
    }
    let pos = [robot.x, robot.y];
    let poly = remaining_polyline(pos, &path.waypoints);
    let next = walk(&poly, robot.speed * dt);
    let aim = walk(&poly, HEADING_LOOKAHEAD);
    let moved = (next[0] - pos[0]).hypot(next[1] - pos[1]) > 1e-12;
    let theta = if (aim[0] - pos[0]).hypot(aim[1] - pos[1]) > 1e-9 {
        (aim[1] - pos[1]).atan2(aim[0] - pos[0])
    } else {
        robot.theta
    };
    let new_state = RobotState {
        x: next[0],
        y: next[1],
        theta: if moved { theta } else { robot.theta },
        speed: robot.speed,
    };
    if !moved {
        return Ok(new_state);
    }
    if !world.bounds.contains(next[0], next[1]) {
        return Err(CollisionFault {
            label: "world boundary".into(),
            x: next[0],
            y: next[1],
            permitted: false,
        });
    }
    for (i, o) in world.objects.iter().enumerate() {
        if !o.truly_traversable && o.footprint.touches_segment(pos, next) {
            return Err(CollisionFault {
                label: o.label.clone(),
                x: next[0],
                y: next[1],
                permitted: permissions.get(i).copied().unwrap_or(false),
            });
        }
    }
    for s in &world.static_map {
        if s.polygon.touches_segment(pos, next) {
            return Err(CollisionFault {
                label: s.label.clone(),
                x: next[0],
                y: next[1],
                permitted: false,
            });
        }
    }
    Ok(new_state)
}

/// Camera placement on the robot: position in the robot frame (z up) and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraMount {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            z: 0.3,
            yaw: 0.0,
        }
    }
}

impl CameraMount {
    /// Robot-frame point to camera optical frame.
    pub fn robot_to_optical(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let r = lidar_to_optical_rotation()
            * Rotation3::from_axis_angle(&Vector3::z_axis(), -self.yaw).matrix();
        let t = -(r * Vector3::new(self.x, self.y, self.z));
        (r, t)
    }

    /// Extrinsic `(R_L^C, t_L^C)` for a LiDAR at `lidar_height` on the
    /// robot's vertical axis.
    pub fn lidar_extrinsic(&self, lidar_height: f64) -> (Matrix3<f64>, Vector3<f64>) {
        let (r, t) = self.robot_to_optical();
        (r, r * Vector3::new(0.0, 0.0, lidar_height) + t)
    }
}

fn project_px(cam: &CameraModel, p: &Vector3<f64>) -> (f64, f64) {
    let k = cam.intrinsic_matrix() * p;
    (k.x / k.z, k.y / k.z)
}

fn touches_image(cam: &CameraModel, a: (f64, f64), b: (f64, f64)) -> bool {
    let (w, h) = cam.image_size();
    a.0.max(b.0) >= -1.0
        && a.0.min(b.0) <= w as f64 + 1.0
        && a.1.max(b.1) >= -1.0
        && a.1.min(b.1) <= h as f64 + 1.0
}

fn subdivide(
    cam: &CameraModel,
    a: Vector3<f64>,
    b: Vector3<f64>,
    depth: u32,
    out: &mut Vec<Vector3<f64>>,
) {
    let (pa, pb) = (project_px(cam, &a), project_px(cam, &b));
    let px = (pa.0 - pb.0).hypot(pa.1 - pb.1);
    if px <= 1.0 || depth >= 48 || (a - b).norm() < 1e-5 || !touches_image(cam, pa, pb) {
        return;
    }
    let m = (a + b) * 0.5;
    subdivide(cam, a, m, depth + 1, out);
    out.push(m);
    subdivide(cam, m, b, depth + 1, out);
}

/// Samples the camera-frame segment `a`-`b` after clipping it to the near
/// plane; in-image spacing is at most one pixel.
pub fn sample_segment(
    cam: &CameraModel,
    a: Vector3<f64>,
    b: Vector3<f64>,
    out: &mut Vec<Vector3<f64>>,
) {
    let (za, zb) = (a.z, b.z);
    if za < CAMERA_NEAR && zb < CAMERA_NEAR {
        return;
    }
    let clip = |inside: Vector3<f64>, outside: Vector3<f64>| {
        let t = (CAMERA_NEAR - inside.z) / (outside.z - inside.z);
        inside + (outside - inside) * t
    };
    let (a, b) = match (za >= CAMERA_NEAR, zb >= CAMERA_NEAR) {
        (true, true) => (a, b),
        (true, false) => (a, clip(a, b)),
        (false, true) => (clip(b, a), b),
        (false, false) => unreachable!(),
    };
    out.push(a);
    subdivide(cam, a, b, 0, out);
    out.push(b);
}

/// Boundary samples of every object prism, in the camera frame. Objects with
/// no part in front of the camera are left out.
pub fn camera_view(
    world: &World,
    robot: &RobotState,
    cam: &CameraModel,
    mount: &CameraMount,
) -> SceneView {
    let pose = robot.pose();
    let (r, t) = mount.robot_to_optical();
    let to_cam = |x: f64, y: f64, z: f64| {
        let (lx, ly) = pose.inverse_transform_point(x, y);
        r * Vector3::new(lx, ly, z) + t
    };
    let mut silhouettes = Vec::new();
    for o in &world.objects {
        let [z0, z1] = o.height_band;
        let mut points = Vec::new();
        for (a, b) in o.footprint.edges() {
            for z in [z0, z1] {
                sample_segment(
                    cam,
                    to_cam(a[0], a[1], z),
                    to_cam(b[0], b[1], z),
                    &mut points,
                );
            }
            sample_segment(
                cam,
                to_cam(a[0], a[1], z0),
                to_cam(a[0], a[1], z1),
                &mut points,
            );
        }
        if !points.is_empty() {
            silhouettes.push(Silhouette {
                label: o.label.clone(),
                points,
            });
        }
    }
    SceneView { silhouettes }
}
