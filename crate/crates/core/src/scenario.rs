//! Scenario files: world layout, sensors, start pose and default goal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::{
    rasterize_static, Costmap, CostmapError, GridSpec, DEFAULT_INFLATION_RADIUS, DEFAULT_RESOLUTION,
};
use crate::geometry::{CameraError, CameraModel};
use crate::grounding::GrounderNoise;
use crate::planar::Polygon;
use crate::simworld::{
    CameraMount, LidarSpec, RobotState, SceneObject, SimError, StaticFeature, World, WorldBounds,
};

pub const DEFAULT_SPEED: f64 = 0.5;

const BUILTIN: [(&str, &str); 4] = [
    (
        "curtain_room",
        include_str!("../scenarios/curtain_room.json"),
    ),
    (
        "hospital_wall",
        include_str!("../scenarios/hospital_wall.json"),
    ),
    ("grass_field", include_str!("../scenarios/grass_field.json")),
    ("mrc_ward", include_str!("../scenarios/mrc_ward.json")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario JSON: {0}")]
    Parse(String),
    #[error("unknown scenario `{0}`")]
    Unknown(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Grid(#[from] CostmapError),
    #[error(transparent)]
    Sensor(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

/// Camera intrinsics; the extrinsic follows from the mount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub s_x: f64,
    pub s_y: f64,
    pub k: f64,
    pub u0: f64,
    pub v0: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            f: 1.0,
            s_x: 525.0,
            s_y: 525.0,
            k: 0.0,
            u0: 320.0,
            v0: 240.0,
            image_w: 640,
            image_h: 480,
        }
    }
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION
}

fn default_inflation() -> f64 {
    DEFAULT_INFLATION_RADIUS
}

fn default_speed() -> f64 {
    DEFAULT_SPEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub bounds: WorldBounds,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_inflation")]
    pub inflation_radius: f64,
    #[serde(default)]
    pub static_map: Vec<StaticFeature>,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    pub start: StartPose,
    #[serde(default = "default_speed")]
    pub speed: f64,
    pub goal: [f64; 2],
    #[serde(default)]
    pub lidar: LidarSpec,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub mount: CameraMount,
    #[serde(default)]
    pub grounder_noise: GrounderNoise,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_json(text))
            .unwrap_or_else(|| Err(ScenarioError::Unknown(name.to_string())))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let b = &self.bounds;
        if !(b.min[0] < b.max[0] && b.min[1] < b.max[1]) {
            return Err(ScenarioError::Invalid(format!(
                "empty world bounds {:?}..{:?}",
                b.min, b.max
            )));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "speed must be positive, got {}",
                self.speed
            )));
        }
        if !(self.inflation_radius >= 0.0) {
            return Err(ScenarioError::Invalid(
                "inflation_radius must be >= 0".into(),
            ));
        }
        for o in &self.objects {
            let [lo, hi] = o.height_band;
            if !(lo < hi) {
                return Err(ScenarioError::Invalid(format!(
                    "object `{}` has an empty height band",
                    o.label
                )));
            }
            if o.label.trim().is_empty() {
                return Err(ScenarioError::Invalid("object label is empty".into()));
            }
        }
        if !b.contains(self.start.x, self.start.y) {
            return Err(ScenarioError::Invalid(
                "start pose is outside the world".into(),
            ));
        }
        if !b.contains(self.goal[0], self.goal[1]) {
            return Err(ScenarioError::Invalid(
                "default goal is outside the world".into(),
            ));
        }
        self.lidar.validate()?;
        self.grid_spec()?;
        self.camera_model()?;
        Ok(())
    }

    pub fn world(&self) -> World {
        World::new(self.bounds, self.static_map.clone(), self.objects.clone())
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CostmapError> {
        GridSpec::covering(self.bounds.min, self.bounds.max, self.resolution)
    }

    /// Costmap holding only the prior static map.
    pub fn initial_costmap(&self) -> Result<Costmap, CostmapError> {
        let spec = self.grid_spec()?;
        let polys: Vec<Polygon> = self.static_map.iter().map(|s| s.polygon.clone()).collect();
        Costmap::with_static(spec, rasterize_static(&spec, &polys), self.inflation_radius)
    }

    /// Camera with the extrinsic implied by the mount and LiDAR height.
    pub fn camera_model(&self) -> Result<CameraModel, CameraError> {
        let c = &self.camera;
        let (r, t) = self.mount.lidar_extrinsic(self.lidar.mount_height);
        CameraModel::new(
            c.f,
            c.s_x,
            c.s_y,
            c.k,
            (c.u0, c.v0),
            r,
            t,
            (c.image_w, c.image_h),
        )
    }

    pub fn start_state(&self) -> RobotState {
        RobotState {
            x: self.start.x,
            y: self.start.y,
            theta: self.start.theta,
            speed: self.speed,
        }
    }

    pub fn object(&self, label: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.label == label)
    }
}
