//! Pixel-space boxes for requested landmark labels.
//!
//! [`ground_synthetic`] stands in for an open-vocabulary detector: it takes
//! the camera-frame silhouettes produced by the simulator, projects them and
//! returns the tight axis-aligned box of every matching object, optionally
//! perturbed by [`GrounderNoise`]. [`remote_detect`] speaks to a real
//! detector service with the same output contract.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::geometry::BoundingBox;
use crate::geometry::CameraModel;
use crate::instruction::{Attribute, LandmarkDirective, TransportError};

/// Boundary samples of one scene object in the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub label: String,
    pub points: Vec<Vector3<f64>>,
}

/// Everything the camera could see this frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneView {
    pub silhouettes: Vec<Silhouette>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedBox {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub attribute: Attribute,
}

/// Detector imperfections: fragmented boxes, jittered centers, missed
/// detections. All draws come from a ChaCha stream seeded by `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrounderNoise {
    pub split_probability: f64,
    pub center_jitter_px: f64,
    pub dropout_probability: f64,
    pub seed: u64,
}

impl Default for GrounderNoise {
    fn default() -> Self {
        Self::none()
    }
}

impl GrounderNoise {
    pub const fn none() -> Self {
        Self {
            split_probability: 0.0,
            center_jitter_px: 0.0,
            dropout_probability: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("box label `{0}` has no directive")]
    UnknownLabel(String),
}

/// A requested label matches an object label when it equals it or its last
/// word ("sign" matches "warning sign").
pub fn label_matches(requested: &str, object_label: &str) -> bool {
    let object_label = object_label.trim().to_lowercase();
    let requested = requested.trim().to_lowercase();
    object_label == requested || object_label.rsplit(' ').next() == Some(requested.as_str())
}

/// Tight pixel box of the silhouette samples with positive depth, or `None`
/// when that box misses the image.
pub fn silhouette_box(sil: &Silhouette, cam: &CameraModel) -> Option<BoundingBox> {
    let (mut min_u, mut min_v) = (f64::INFINITY, f64::INFINITY);
    let (mut max_u, mut max_v) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &sil.points {
        let Ok(s) = cam.project_camera_point(p) else {
            continue;
        };
        min_u = min_u.min(s.u);
        max_u = max_u.max(s.u);
        min_v = min_v.min(s.v);
        max_v = max_v.max(s.v);
    }
    // An object right in front of the lens can fill the frame with its whole
    // outline outside it, so visibility is overlap of the outline's extent
    // with the image rather than a sample landing inside.
    let (w, h) = cam.image_size();
    if !(min_u <= w as f64 && max_u >= 0.0 && min_v <= h as f64 && max_v >= 0.0) {
        return None;
    }
    // a single visible sample still deserves a non-degenerate box
    let pad = |lo: f64, hi: f64| {
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (min_u, max_u) = pad(min_u, max_u);
    let (min_v, max_v) = pad(min_v, max_v);
    BoundingBox::from_corners(min_u, min_v, max_u, max_v)
}

/// Splits a box in two along its longer side. The halves overlap by one
/// pixel so their union covers the original.
pub fn split_box(b: &BoundingBox, fraction: f64) -> [BoundingBox; 2] {
    const OVERLAP: f64 = 0.5;
    if b.w >= b.h {
        let s = b.min_u() + fraction * b.w;
        [
            BoundingBox::from_corners(
                b.min_u(),
                b.min_v(),
                (s + OVERLAP).min(b.max_u()),
                b.max_v(),
            ),
            BoundingBox::from_corners(
                (s - OVERLAP).max(b.min_u()),
                b.min_v(),
                b.max_u(),
                b.max_v(),
            ),
        ]
    } else {
        let s = b.min_v() + fraction * b.h;
        [
            BoundingBox::from_corners(
                b.min_u(),
                b.min_v(),
                b.max_u(),
                (s + OVERLAP).min(b.max_v()),
            ),
            BoundingBox::from_corners(
                b.min_u(),
                (s - OVERLAP).max(b.min_v()),
                b.max_u(),
                b.max_v(),
            ),
        ]
    }
    .map(|half| half.unwrap_or(*b))
}

/// Simulated open-vocabulary grounding.
///
/// Per matching, visible object: tight box, then dropout, center jitter,
/// clipping to the image and an optional split into two sub-boxes. Boxes are
/// labelled with the requested label, in scene order then label order.
pub fn ground_synthetic(
    view: &SceneView,
    labels: &[String],
    cam: &CameraModel,
    noise: &GrounderNoise,
) -> Vec<LabeledBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let (img_w, img_h) = cam.image_size();
    let mut out = Vec::new();
    for sil in &view.silhouettes {
        let Some(label) = labels.iter().find(|l| label_matches(l, &sil.label)) else {
            continue;
        };
        let Some(tight) = silhouette_box(sil, cam) else {
            continue;
        };
        if noise.dropout_probability > 0.0 && rng.random::<f64>() < noise.dropout_probability {
            continue;
        }
        let mut b = tight;
        if noise.center_jitter_px > 0.0 {
            let j = noise.center_jitter_px;
            b.cx += rng.random_range(-j..=j);
            b.cy += rng.random_range(-j..=j);
        }
        let Some(b) = b.clip_to_image(img_w, img_h) else {
            continue;
        };
        if noise.split_probability > 0.0 && rng.random::<f64>() < noise.split_probability {
            let fraction = rng.random_range(0.3..=0.7);
            for half in split_box(&b, fraction) {
                out.push(LabeledBox {
                    label: label.clone(),
                    bbox: half,
                });
            }
        } else {
            out.push(LabeledBox {
                label: label.clone(),
                bbox: b,
            });
        }
    }
    out
}

/// Copies each box's directive attribute onto it.
pub fn attach_attributes(
    boxes: &[LabeledBox],
    directives: &[LandmarkDirective],
) -> Result<Vec<AttributedBox>, GroundingError> {
    boxes
        .iter()
        .map(|b| {
            directives
                .iter()
                .find(|d| d.label == b.label)
                .map(|d| AttributedBox {
                    label: b.label.clone(),
                    bbox: b.bbox,
                    attribute: d.attribute,
                })
                .ok_or_else(|| GroundingError::UnknownLabel(b.label.clone()))
        })
        .collect()
}

/// Encoded camera frame sent to a remote detector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    pub bytes: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

/// Open-vocabulary detector endpoint. Returns the raw response payload.
pub trait DetectorClient {
    fn detect(&self, image: &EncodedImage, prompt: &str) -> Result<String, TransportError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RemoteDetectError {
    #[error("at least one label is required")]
    EmptyLabels,
    #[error("detector request failed: {message}")]
    Transport { message: String },
    #[error("could not decode detector response ({reason}): {raw:?}")]
    Decode { reason: String, raw: String },
}

/// Labels joined into the detector text prompt, e.g. `"curtain, chair"`.
pub fn detector_prompt(labels: &[String]) -> Result<String, RemoteDetectError> {
    let cleaned: Vec<&str> = labels
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .collect();
    if cleaned.is_empty() {
        return Err(RemoteDetectError::EmptyLabels);
    }
    Ok(cleaned.join(", "))
}

#[derive(Debug, Deserialize)]
struct WireDetection {
    label: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    detections: Vec<WireDetection>,
    #[serde(default)]
    normalized: Option<bool>,
}

/// Decodes `{"detections":[{"label":..,"box":[cx,cy,w,h]}],"normalized":..}`.
///
/// Normalized coordinates are scaled by the image size. When `normalized` is
/// absent, coordinates that all lie in `[0, 1]` are taken as normalized.
pub fn decode_detections(
    raw: &str,
    width: u32,
    height: u32,
) -> Result<Vec<LabeledBox>, RemoteDetectError> {
    let decode_err = |reason: String| RemoteDetectError::Decode {
        reason,
        raw: raw.to_string(),
    };
    let wire: WireResponse = serde_json::from_str(raw).map_err(|e| decode_err(e.to_string()))?;
    let normalized = wire.normalized.unwrap_or_else(|| {
        wire.detections
            .iter()
            .flat_map(|d| d.bbox)
            .all(|v| (0.0..=1.0).contains(&v))
    });
    let (sx, sy) = if normalized {
        (width as f64, height as f64)
    } else {
        (1.0, 1.0)
    };
    wire.detections
        .into_iter()
        .map(|d| {
            let [cx, cy, w, h] = d.bbox;
            BoundingBox::new(cx * sx, cy * sy, w * sx, h * sy)
                .map(|bbox| LabeledBox {
                    label: d.label.trim().to_lowercase(),
                    bbox,
                })
                .ok_or_else(|| decode_err(format!("degenerate box for `{}`", d.label)))
        })
        .collect()
}

pub fn remote_detect(
    image: &EncodedImage,
    labels: &[String],
    client: &dyn DetectorClient,
) -> Result<Vec<LabeledBox>, RemoteDetectError> {
    let prompt = detector_prompt(labels)?;
    let raw = client
        .detect(image, &prompt)
        .map_err(|e| RemoteDetectError::Transport { message: e.0 })?;
    decode_detections(&raw, image.width, image.height)
}
