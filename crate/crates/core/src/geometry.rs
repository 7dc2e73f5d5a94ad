//! Pinhole camera model and the LiDAR-to-image transformation.
//!
//! A LiDAR point `p` is moved into the camera frame by the extrinsic
//! `(R, t)`, multiplied by the intrinsic matrix
//!
//! ```text
//! | f*s_x  k*s_y  u_0 |
//! |   0    f*s_y  v_0 |
//! |   0      0     1  |
//! ```
//!
//! and divided by the homogeneous depth `w'`. Points with `w' <= EPS_DEPTH`
//! cannot be placed on the image and are reported as [`BehindCamera`].

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum camera-frame depth (length units) for a point to be projectable.
pub const EPS_DEPTH: f64 = 1e-6;

/// Tolerance used when validating that the extrinsic rotation is orthonormal.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("focal length times pixel scale must be positive (f*s_x = {fx}, f*s_y = {fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("extrinsic rotation is not orthonormal with determinant +1 (deviation {deviation:e})")]
    BadRotation { deviation: f64 },
    #[error("image size must be positive, got {w}x{h}")]
    EmptyImage { w: u32, h: u32 },
    #[error("camera parameter `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("invalid calibration file: {0}")]
    Parse(String),
}

/// A point in the LiDAR frame (z up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl LidarPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Continuous pixel coordinate plus the camera-frame depth it was divided by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// The point had `w' <= EPS_DEPTH` and has no image coordinate.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("point is behind the camera (depth {depth})")]
pub struct BehindCamera {
    pub depth: f64,
}

/// Axis-aligned pixel box given by center, width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Returns `None` unless `w > 0` and `h > 0` and all fields are finite.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Option<Self> {
        let ok = [cx, cy, w, h].iter().all(|v| v.is_finite()) && w > 0.0 && h > 0.0;
        ok.then_some(Self { cx, cy, w, h })
    }

    pub fn from_corners(min_u: f64, min_v: f64, max_u: f64, max_v: f64) -> Option<Self> {
        Self::new(
            0.5 * (min_u + max_u),
            0.5 * (min_v + max_v),
            max_u - min_u,
            max_v - min_v,
        )
    }

    pub fn min_u(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn max_u(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn min_v(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn max_v(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// Intersection with the image rectangle `[0, w] x [0, h]`; `None` when empty.
    pub fn clip_to_image(&self, image_w: u32, image_h: u32) -> Option<Self> {
        let min_u = self.min_u().max(0.0);
        let max_u = self.max_u().min(image_w as f64);
        let min_v = self.min_v().max(0.0);
        let max_v = self.max_v().min(image_h as f64);
        Self::from_corners(min_u, min_v, max_u, max_v)
    }

    /// True when `other` lies entirely inside `self` (closed).
    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.min_u() <= other.min_u()
            && other.max_u() <= self.max_u()
            && self.min_v() <= other.min_v()
            && other.max_v() <= self.max_v()
    }
}

/// Closed-interval membership of a pixel in a box.
pub fn in_box(s: &PixelCoord, b: &BoundingBox) -> bool {
    b.min_u() <= s.u && s.u <= b.max_u() && b.min_v() <= s.v && s.v <= b.max_v()
}

/// Intrinsic and extrinsic parameters of a pinhole camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    focal: f64,
    scale_x: f64,
    scale_y: f64,
    skew: f64,
    u0: f64,
    v0: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    image_w: u32,
    image_h: u32,
}

/// Rotation taking LiDAR axes (x forward, y left, z up) to optical axes
/// (x right, y down, z forward).
pub fn lidar_to_optical_rotation() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        focal: f64,
        scale_x: f64,
        scale_y: f64,
        skew: f64,
        principal: (f64, f64),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: (u32, u32),
    ) -> Result<Self, CameraError> {
        for (name, v) in [
            ("f", focal),
            ("s_x", scale_x),
            ("s_y", scale_y),
            ("k", skew),
            ("u0", principal.0),
            ("v0", principal.1),
        ] {
            if !v.is_finite() {
                return Err(CameraError::NonFinite(name));
            }
        }
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(CameraError::NonFinite("extrinsic"));
        }
        let fx = focal * scale_x;
        let fy = focal * scale_y;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::NonPositiveFocal { fx, fy });
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        let det = (rotation.determinant() - 1.0).abs();
        let deviation = ortho.max(det);
        if deviation > ROTATION_TOLERANCE {
            return Err(CameraError::BadRotation { deviation });
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(CameraError::EmptyImage {
                w: image_size.0,
                h: image_size.1,
            });
        }
        Ok(Self {
            focal,
            scale_x,
            scale_y,
            skew,
            u0: principal.0,
            v0: principal.1,
            rotation,
            translation,
            image_w: image_size.0,
            image_h: image_size.1,
        })
    }

    /// 640x480 camera with `f*s = 525`, principal point at the image center
    /// and the LiDAR and optical centers coincident.
    pub fn default_synthetic() -> Self {
        Self::new(
            1.0,
            525.0,
            525.0,
            0.0,
            (320.0, 240.0),
            lidar_to_optical_rotation(),
            Vector3::zeros(),
            (640, 480),
        )
        .expect("default camera is valid")
    }

    /// Same intrinsics with a different extrinsic.
    pub fn with_extrinsic(
        &self,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        Self::new(
            self.focal,
            self.scale_x,
            self.scale_y,
            self.skew,
            (self.u0, self.v0),
            rotation,
            translation,
            (self.image_w, self.image_h),
        )
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal * self.scale_x,
            self.skew * self.scale_y,
            self.u0,
            0.0,
            self.focal * self.scale_y,
            self.v0,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.image_w, self.image_h)
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.u0, self.v0)
    }

    pub fn focal_px(&self) -> (f64, f64) {
        (self.focal * self.scale_x, self.focal * self.scale_y)
    }

    pub fn skew(&self) -> f64 {
        self.skew
    }

    pub fn lidar_to_camera(&self, p: &LidarPoint) -> Vector3<f64> {
        self.rotation * p.to_vector() + self.translation
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Result<PixelCoord, BehindCamera> {
        let h = self.intrinsic_matrix() * pc;
        let depth = h.z;
        if depth <= EPS_DEPTH {
            return Err(BehindCamera { depth });
        }
        Ok(PixelCoord {
            u: h.x / depth,
            v: h.y / depth,
            depth,
        })
    }

    /// `s = T(p)`: LiDAR point to continuous pixel coordinates. The result is
    /// not clipped to the image.
    pub fn project(&self, p: &LidarPoint) -> Result<PixelCoord, BehindCamera> {
        self.project_camera_point(&self.lidar_to_camera(p))
    }

    pub fn in_image(&self, s: &PixelCoord) -> bool {
        (0.0..=self.image_w as f64).contains(&s.u) && (0.0..=self.image_h as f64).contains(&s.v)
    }

    /// Camera-frame point at pixel `(u, v)` and depth `d`.
    pub fn unproject_camera(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let (fx, fy) = self.focal_px();
        let y = (v - self.v0) / fy;
        let x = (u - self.u0 - self.skew * self.scale_y * y) / fx;
        Vector3::new(x * depth, y * depth, depth)
    }

    /// LiDAR-frame point whose projection is `(u, v)` at depth `d`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> LidarPoint {
        let pc = self.unproject_camera(u, v, depth);
        let pl = self.rotation.transpose() * (pc - self.translation);
        LidarPoint::new(pl.x, pl.y, pl.z)
    }
}

/// On-disk calibration layout: intrinsics plus row-major `R` and `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub f: f64,
    pub s_x: f64,
    pub s_y: f64,
    #[serde(default)]
    pub k: f64,
    pub u0: f64,
    pub v0: f64,
    pub image_w: u32,
    pub image_h: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TryFrom<CalibrationFile> for CameraModel {
    type Error = CameraError;

    fn try_from(c: CalibrationFile) -> Result<Self, Self::Error> {
        CameraModel::new(
            c.f,
            c.s_x,
            c.s_y,
            c.k,
            (c.u0, c.v0),
            Matrix3::from_row_slice(&c.rotation),
            Vector3::from_row_slice(&c.translation),
            (c.image_w, c.image_h),
        )
    }
}

impl From<&CameraModel> for CalibrationFile {
    fn from(cam: &CameraModel) -> Self {
        let r = cam.rotation;
        Self {
            f: cam.focal,
            s_x: cam.scale_x,
            s_y: cam.scale_y,
            k: cam.skew,
            u0: cam.u0,
            v0: cam.v0,
            image_w: cam.image_w,
            image_h: cam.image_h,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [cam.translation.x, cam.translation.y, cam.translation.z],
        }
    }
}

impl CameraModel {
    pub fn from_json(text: &str) -> Result<Self, CameraError> {
        let raw: CalibrationFile =
            serde_json::from_str(text).map_err(|e| CameraError::Parse(e.to_string()))?;
        raw.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CalibrationFile::from(self)).expect("calibration serializes")
    }
}
