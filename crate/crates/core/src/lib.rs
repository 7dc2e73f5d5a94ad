//! Action-aware costmap navigation: landmark directives from natural
//! language, grounded boxes, LiDAR segmentation, a layered costmap with
//! traversal overrides, A* planning, and a small simulator to run it all.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod costmap;
pub mod geometry;
pub mod grounding;
pub mod instruction;
pub mod planar;
pub mod planner;
pub mod runtime;
pub mod scenario;
pub mod segmentation;
pub mod simworld;
