//! Splits a LiDAR cloud into traversable and untraversable parts using
//! attributed image boxes.
//!
//! A point is traversable only when it projects in front of the camera, lands
//! in at least one box, and every box containing it is traversable. Points
//! outside every box, behind the camera, or inside any untraversable box are
//! untraversable.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{in_box, CameraModel, LidarPoint};
use crate::grounding::AttributedBox;
use crate::instruction::Attribute;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub stamp: f64,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>, stamp: f64) -> Self {
        Self { points, stamp }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Index sets into the source cloud; disjoint and exhaustive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedCloud {
    pub traversable: Vec<usize>,
    pub untraversable: Vec<usize>,
}

impl SegmentedCloud {
    /// Every index untraversable; what the no-box branch feeds the costmap.
    pub fn all_untraversable(n: usize) -> Self {
        Self {
            traversable: Vec::new(),
            untraversable: (0..n).collect(),
        }
    }

    fn from_flags(flags: &[bool]) -> Self {
        let mut seg = Self::default();
        for (i, &t) in flags.iter().enumerate() {
            if t {
                seg.traversable.push(i);
            } else {
                seg.untraversable.push(i);
            }
        }
        seg
    }
}

/// Attribute of a single point under the box set.
pub fn classify_point(p: &LidarPoint, boxes: &[AttributedBox], cam: &CameraModel) -> Attribute {
    let Ok(s) = cam.project(p) else {
        return Attribute::Untraversable;
    };
    let mut covered = false;
    for b in boxes {
        if in_box(&s, &b.bbox) {
            if b.attribute == Attribute::Untraversable {
                return Attribute::Untraversable;
            }
            covered = true;
        }
    }
    if covered {
        Attribute::Traversable
    } else {
        Attribute::Untraversable
    }
}

pub fn segment(cloud: &PointCloud, boxes: &[AttributedBox], cam: &CameraModel) -> SegmentedCloud {
    segment_chunked(cloud, boxes, cam, 4096)
}

/// [`segment`] with an explicit work-split size; the result never depends on
/// `chunk`.
pub fn segment_chunked(
    cloud: &PointCloud,
    boxes: &[AttributedBox],
    cam: &CameraModel,
    chunk: usize,
) -> SegmentedCloud {
    if boxes.is_empty() {
        return SegmentedCloud::all_untraversable(cloud.len());
    }
    let classify = |p: &LidarPoint| classify_point(p, boxes, cam).is_traversable();
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    let flags: Vec<bool> = cloud
        .points
        .par_chunks(chunk)
        .flat_map_iter(|c| c.iter().map(classify))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let flags: Vec<bool> = cloud
        .points
        .chunks(chunk)
        .flat_map(|c| c.iter().map(classify))
        .collect();
    SegmentedCloud::from_flags(&flags)
}
