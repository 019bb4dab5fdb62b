//! Annotation toolkit for curating video datasets with disentangled camera
//! and object motion.
//!
//! The per-video pipeline consumes SfM output (COLMAP text), relative depth
//! rasters, instance masks and keypoint tracks, and produces:
//!
//! * per-frame scale/shift alignment of relative depth to SfM scale ([`depth`]),
//! * camera-compensated object motion fields and motion strength ([`motion`]),
//! * a JSON report used to filter out static videos ([`pipeline`]).
//!
//! Camera conditioning artifacts (Plücker ray maps, orbit and interpolated
//! trajectories) live in [`geometry`] and [`trajectory`]; [`synth`] generates
//! scenes with known ground truth for testing all of the above.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod depth;
pub mod geometry;
pub mod ingest;
pub mod motion;
pub mod pipeline;
pub mod synth;
pub mod trajectory;

pub use depth::{align_depth, median, rasterize_sparse_depth, Alignment, DepthKind, DepthMap};
pub use geometry::{
    backproject_pixel, camera_center, pixel_ray, plucker_map, plucker_ray, project_point,
    Intrinsics, PluckerMap, PluckerRay, Point3, Pose, Vec3,
};
pub use ingest::{IngestError, SfmModel, SparseCloud};
pub use motion::{
    classify_dynamic, motion_field, object_strength, video_motion_strength, InstanceMask,
    InstanceTracks, MotionField, MotionReport,
};
pub use trajectory::{densify_trajectory, interpolate_pose, orbit_trajectory, Trajectory};
