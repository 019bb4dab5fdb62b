//! Object motion fields, motion strength and the static-scene filter.
//!
//! A keypoint tracked from frame `i` to frame `j` is lifted to 3D with the
//! aligned depth of frame `i`, reprojected into frame `j`, and compared with
//! its tracked position there. The residual, normalized by image size, is
//! the object's own motion with the camera motion cancelled out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{Alignment, DepthKind, DepthMap};
use crate::geometry::{backproject_pixel, nearest_pixel, project_point, Intrinsics, Pose};

pub const DEFAULT_THRESHOLD: f64 = 0.002;
pub const DEFAULT_FRAME_GAP: usize = 1;
pub const DEFAULT_GRID_STEP: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("instance id must be >= 1")]
    InvalidInstance,
    #[error("instance {instance}: duplicate track point (frame {frame}, keypoint {keypoint})")]
    DuplicateTrackPoint {
        instance: u32,
        frame: usize,
        keypoint: u64,
    },
    #[error("motion field needs two distinct frames (got {0} twice)")]
    SameFrame(usize),
    #[error("depth map for frame {0} is relative; align it first")]
    UnalignedDepth(usize),
    #[error("depth map is {got_w}x{got_h} but intrinsics are {want_w}x{want_h}")]
    SizeMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

/// Per-pixel instance labels; `0` is static background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl InstanceMask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, MotionError> {
        if data.len() != width as usize * height as usize {
            return Err(MotionError::InvalidMask(format!(
                "{} bytes for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width as usize + u]
    }

    pub fn pixel_count(&self, instance: u8) -> usize {
        self.data.iter().filter(|&&x| x == instance).count()
    }

    /// Distinct non-zero ids, ascending.
    pub fn instances(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &x in &self.data {
            seen[x as usize] = true;
        }
        (1..=255u8).filter(|&i| seen[i as usize]).collect()
    }
}

/// Grid positions `(c·step, r·step)` labelled `instance`, row-major.
///
/// A `grid_step` of 0 is treated as 1.
pub fn sample_keypoints(mask: &InstanceMask, instance: u8, grid_step: usize) -> Vec<(f64, f64)> {
    let step = grid_step.max(1);
    let mut out = Vec::new();
    for v in (0..mask.height as usize).step_by(step) {
        for u in (0..mask.width as usize).step_by(step) {
            if mask.get(u, v) == instance {
                out.push((u as f64, v as f64));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: usize,
    pub keypoint: u64,
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

/// All keypoint observations of one object, sorted by `(frame, keypoint)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTracks {
    instance_id: u32,
    points: Vec<TrackPoint>,
}

impl InstanceTracks {
    pub fn new(instance_id: u32, mut points: Vec<TrackPoint>) -> Result<Self, MotionError> {
        if instance_id == 0 {
            return Err(MotionError::InvalidInstance);
        }
        points.sort_by_key(|p| (p.frame, p.keypoint));
        if let Some(w) = points
            .windows(2)
            .find(|w| (w[0].frame, w[0].keypoint) == (w[1].frame, w[1].keypoint))
        {
            return Err(MotionError::DuplicateTrackPoint {
                instance: instance_id,
                frame: w[0].frame,
                keypoint: w[0].keypoint,
            });
        }
        Ok(Self {
            instance_id,
            points,
        })
    }

    pub fn instance_id(&self) -> u32 {
        self.instance_id
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    /// Observations in `frame`, sorted by keypoint id.
    pub fn in_frame(&self, frame: usize) -> &[TrackPoint] {
        let lo = self.points.partition_point(|p| p.frame < frame);
        let hi = self.points.partition_point(|p| p.frame <= frame);
        &self.points[lo..hi]
    }

    pub fn find(&self, frame: usize, keypoint: u64) -> Option<&TrackPoint> {
        let obs = self.in_frame(frame);
        obs.binary_search_by_key(&keypoint, |p| p.keypoint)
            .ok()
            .map(|i| &obs[i])
    }

    pub fn frames(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.points.iter().map(|p| p.frame).collect();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPair {
    pub keypoint: u64,
    pub frame_i: usize,
    pub frame_j: usize,
    pub du: f64,
    pub dv: f64,
}

impl MotionPair {
    pub fn magnitude(&self) -> f64 {
        self.du.hypot(self.dv)
    }
}

/// Keypoints dropped while computing a field, by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub invisible: usize,
    pub bad_depth: usize,
    pub behind_camera: usize,
}

impl SkipCounts {
    pub fn add(&mut self, other: &SkipCounts) {
        self.invisible += other.invisible;
        self.bad_depth += other.bad_depth;
        self.behind_camera += other.behind_camera;
    }

    pub fn total(&self) -> usize {
        self.invisible + self.bad_depth + self.behind_camera
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub instance_id: u32,
    pub pairs: Vec<MotionPair>,
    pub skipped: SkipCounts,
}

/// Camera-compensated displacement of every keypoint of `tracks` from
/// `frame_i` to `frame_j`, normalized by image width and height.
#[allow(clippy::too_many_arguments)]
pub fn motion_field(
    tracks: &InstanceTracks,
    depth_i: &DepthMap,
    pose_i: &Pose,
    pose_j: &Pose,
    intr: &Intrinsics,
    frame_i: usize,
    frame_j: usize,
) -> Result<MotionField, MotionError> {
    if frame_i == frame_j {
        return Err(MotionError::SameFrame(frame_i));
    }
    if depth_i.kind() == DepthKind::Relative {
        return Err(MotionError::UnalignedDepth(frame_i));
    }
    if (depth_i.width(), depth_i.height()) != (intr.width, intr.height) {
        return Err(MotionError::SizeMismatch {
            got_w: depth_i.width(),
            got_h: depth_i.height(),
            want_w: intr.width,
            want_h: intr.height,
        });
    }
    let (w, h) = (intr.width as f64, intr.height as f64);
    let mut pairs = Vec::new();
    let mut skipped = SkipCounts::default();
    for src in tracks.in_frame(frame_i) {
        let dst = tracks.find(frame_j, src.keypoint).filter(|p| p.visible);
        let (Some(dst), true) = (dst, src.visible) else {
            skipped.invisible += 1;
            continue;
        };
        let Some((pu, pv)) = nearest_pixel(src.u, src.v, intr.width, intr.height) else {
            skipped.invisible += 1;
            continue;
        };
        let Ok(world) = backproject_pixel(pose_i, intr, src.u, src.v, depth_i.get(pu, pv)) else {
            skipped.bad_depth += 1;
            continue;
        };
        let Ok(reproj) = project_point(pose_j, intr, &world) else {
            skipped.behind_camera += 1;
            continue;
        };
        pairs.push(MotionPair {
            keypoint: src.keypoint,
            frame_i,
            frame_j,
            du: (dst.u - reproj.u) / w,
            dv: (dst.v - reproj.v) / h,
        });
    }
    Ok(MotionField {
        instance_id: tracks.instance_id,
        pairs,
        skipped,
    })
}

/// Mean displacement magnitude over every (keypoint, frame pair) entry.
pub fn object_strength(fields: &[MotionField]) -> f64 {
    let (sum, n) = fields
        .iter()
        .flat_map(|f| &f.pairs)
        .fold((0.0, 0usize), |(s, n), p| (s + p.magnitude(), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn video_motion_strength(per_object: &[(u32, f64)]) -> f64 {
    per_object.iter().map(|&(_, s)| s).fold(0.0, f64::max)
}

/// Inclusive at the boundary.
pub fn classify_dynamic(strength: f64, threshold: f64) -> bool {
    strength >= threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectStrength {
    pub instance: u32,
    pub strength: f64,
    pub n_pairs: usize,
    pub skipped: SkipCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameAlignment {
    pub frame: usize,
    #[serde(flatten)]
    pub alignment: Alignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionReport {
    pub video_id: String,
    pub per_object: Vec<ObjectStrength>,
    pub motion_strength: f64,
    pub is_dynamic: bool,
    pub per_frame_alignment: Vec<FrameAlignment>,
}

impl MotionReport {
    pub fn assemble(
        video_id: impl Into<String>,
        mut per_object: Vec<ObjectStrength>,
        mut per_frame_alignment: Vec<FrameAlignment>,
        threshold: f64,
    ) -> Self {
        per_object.sort_by_key(|o| o.instance);
        per_frame_alignment.sort_by_key(|f| f.frame);
        let strengths: Vec<(u32, f64)> =
            per_object.iter().map(|o| (o.instance, o.strength)).collect();
        let motion_strength = video_motion_strength(&strengths);
        Self {
            video_id: video_id.into(),
            per_object,
            motion_strength,
            is_dynamic: classify_dynamic(motion_strength, threshold),
            per_frame_alignment,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, Vec3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).unwrap()
    }

    fn tp(frame: usize, keypoint: u64, u: f64, v: f64) -> TrackPoint {
        TrackPoint {
            frame,
            keypoint,
            u,
            v,
            visible: true,
        }
    }

    fn constant_depth(intr: &Intrinsics, d: f64) -> DepthMap {
        let n = (intr.width * intr.height) as usize;
        DepthMap::new(intr.width, intr.height, vec![d; n], DepthKind::Aligned, 0).unwrap()
    }

    #[test]
    fn full_mask_grid() {
        let mask = InstanceMask::new(4, 4, vec![1; 16]).unwrap();
        assert_eq!(
            sample_keypoints(&mask, 1, 2),
            vec![(0.0, 0.0), (2.0, 0.0), (0.0, 2.0), (2.0, 2.0)]
        );
        assert!(sample_keypoints(&mask, 5, 2).is_empty());
    }

    #[test]
    fn sampling_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (37u32, 23u32);
        let data: Vec<u8> = (0..w * h).map(|_| rng.gen_range(0..4)).collect();
        let mask = InstanceMask::new(w, h, data.clone()).unwrap();
        for step in [1usize, 3, 8] {
            for id in 0..4u8 {
                let mut expected = Vec::new();
                for v in 0..h as usize {
                    for u in 0..w as usize {
                        if u % step == 0 && v % step == 0 && data[v * w as usize + u] == id {
                            expected.push((u as f64, v as f64));
                        }
                    }
                }
                assert_eq!(sample_keypoints(&mask, id, step), expected);
            }
        }
    }

    #[test]
    fn mask_instances() {
        let mask = InstanceMask::new(2, 2, vec![0, 3, 1, 3]).unwrap();
        assert_eq!(mask.instances(), vec![1, 3]);
        assert_eq!(mask.pixel_count(3), 2);
        assert!(InstanceMask::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn duplicate_track_points_are_rejected() {
        let err = InstanceTracks::new(2, vec![tp(0, 1, 0.0, 0.0), tp(0, 1, 1.0, 1.0)]);
        assert!(matches!(err, Err(MotionError::DuplicateTrackPoint { .. })));
        assert!(InstanceTracks::new(0, vec![]).is_err());
    }

    #[test]
    fn identical_poses_give_pixel_displacement() {
        let tracks = InstanceTracks::new(1, vec![tp(0, 7, 64.0, 64.0), tp(1, 7, 74.0, 64.0)]).unwrap();
        let pose = Pose::identity();
        let f = motion_field(&tracks, &constant_depth(&cam(), 1.0), &pose, &pose, &cam(), 0, 1)
            .unwrap();
        assert_eq!(f.pairs.len(), 1);
        assert!((f.pairs[0].du - 0.078125).abs() < 1e-15);
        assert_eq!(f.pairs[0].dv, 0.0);
        assert_eq!(object_strength(&[f]), 0.078125);
    }

    #[test]
    fn static_point_cancels_camera_motion() {
        let intr = cam();
        let p = Point3::new(0.3, -0.2, 4.0);
        let a = Pose::from_quaternion([0.98, 0.02, -0.15, 0.05], Vec3::new(0.1, 0.0, 0.2)).unwrap();
        let b = Pose::from_quaternion([0.97, -0.05, 0.2, 0.01], Vec3::new(-0.3, 0.1, 0.5)).unwrap();
        let pa = project_point(&a, &intr, &p).unwrap();
        let pb = project_point(&b, &intr, &p).unwrap();
        let (iu, iv) = nearest_pixel(pa.u, pa.v, 128, 128).unwrap();
        let mut values = vec![1.0; 128 * 128];
        values[iv * 128 + iu] = pa.depth;
        let depth = DepthMap::new(128, 128, values, DepthKind::Aligned, 0).unwrap();
        let tracks =
            InstanceTracks::new(1, vec![tp(0, 0, pa.u, pa.v), tp(1, 0, pb.u, pb.v)]).unwrap();
        let f = motion_field(&tracks, &depth, &a, &b, &intr, 0, 1).unwrap();
        assert_eq!(f.pairs.len(), 1);
        assert!(f.pairs[0].du.abs() < 1e-9 && f.pairs[0].dv.abs() < 1e-9);
    }

    #[test]
    fn skipped_keypoints_are_counted() {
        let intr = cam();
        let mut values = vec![2.0; 128 * 128];
        values[10 * 128 + 10] = 0.0;
        let depth = DepthMap::new(128, 128, values, DepthKind::Aligned, 0).unwrap();
        let mut hidden = tp(1, 2, 30.0, 30.0);
        hidden.visible = false;
        let tracks = InstanceTracks::new(
            3,
            vec![
                tp(0, 1, 10.0, 10.0), // zero depth
                tp(0, 2, 30.0, 30.0),
                hidden,               // invisible in j
                tp(0, 3, 40.0, 40.0), // absent in j
                tp(0, 4, 64.0, 64.0),
                tp(1, 1, 10.0, 10.0),
                tp(1, 4, 64.0, 64.0),
            ],
        )
        .unwrap();
        // Frame j is 3 units behind the frame-i camera along its axis.
        let pose_j = Pose::new(nalgebra::Matrix3::identity(), Vec3::new(0.0, 0.0, -3.0)).unwrap();
        let f = motion_field(&tracks, &depth, &Pose::identity(), &pose_j, &intr, 0, 1).unwrap();
        assert_eq!(
            f.skipped,
            SkipCounts {
                invisible: 2,
                bad_depth: 1,
                behind_camera: 1
            }
        );
        assert!(f.pairs.is_empty());
        assert_eq!(object_strength(&[f]), 0.0);
    }

    #[test]
    fn field_preconditions() {
        let tracks = InstanceTracks::new(1, vec![]).unwrap();
        let intr = cam();
        let d = constant_depth(&intr, 1.0);
        let p = Pose::identity();
        assert_eq!(
            motion_field(&tracks, &d, &p, &p, &intr, 2, 2).unwrap_err(),
            MotionError::SameFrame(2)
        );
        let rel = DepthMap::new(128, 128, vec![0.5; 128 * 128], DepthKind::Relative, 0).unwrap();
        assert!(motion_field(&tracks, &rel, &p, &p, &intr, 0, 1).is_err());
        let small = DepthMap::new(2, 2, vec![1.0; 4], DepthKind::Aligned, 0).unwrap();
        assert!(motion_field(&tracks, &small, &p, &p, &intr, 0, 1).is_err());
        let empty = motion_field(&tracks, &d, &p, &p, &intr, 0, 1).unwrap();
        assert!(empty.pairs.is_empty());
    }

    #[test]
    fn strength_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pairs: Vec<MotionPair> = (0..1000)
            .map(|k| MotionPair {
                keypoint: k,
                frame_i: 0,
                frame_j: 1,
                du: rng.gen_range(-0.1..0.1),
                dv: rng.gen_range(-0.1..0.1),
            })
            .collect();
        let mut direct = 0.0;
        for p in &pairs {
            direct += (p.du * p.du + p.dv * p.dv).sqrt();
        }
        direct /= 1000.0;
        let (a, b) = pairs.split_at(400);
        let fields = [
            MotionField { instance_id: 1, pairs: a.to_vec(), skipped: SkipCounts::default() },
            MotionField { instance_id: 1, pairs: b.to_vec(), skipped: SkipCounts::default() },
        ];
        assert!((object_strength(&fields) - direct).abs() < 1e-12);
        assert_eq!(object_strength(&[]), 0.0);
    }

    #[test]
    fn video_strength_and_classification() {
        assert_eq!(video_motion_strength(&[]), 0.0);
        assert_eq!(video_motion_strength(&[(1, 0.001), (2, 0.05)]), 0.05);
        assert!(!classify_dynamic(0.0, 0.002));
        assert!(classify_dynamic(0.002, 0.002));
    }

    #[test]
    fn report_assembly() {
        let obj = |instance, strength| ObjectStrength {
            instance,
            strength,
            n_pairs: 1,
            skipped: SkipCounts::default(),
        };
        let r = MotionReport::assemble("v", vec![obj(2, 0.05), obj(1, 0.001)], vec![], 0.002);
        assert_eq!(r.per_object[0].instance, 1);
        assert_eq!(r.motion_strength, 0.05);
        assert!(r.is_dynamic);
        let r = MotionReport::assemble("v", vec![], vec![], 0.002);
        assert_eq!(r.motion_strength, 0.0);
        assert!(!r.is_dynamic);
    }

    fn field_for(
        intr: &Intrinsics,
        a: &Pose,
        b: &Pose,
        src: (f64, f64),
        dst: (f64, f64),
        depth: f64,
    ) -> MotionPair {
        let (iu, iv) = nearest_pixel(src.0, src.1, intr.width, intr.height).unwrap();
        let (w, h) = (intr.width as usize, intr.height as usize);
        let mut values = vec![1.0; w * h];
        values[iv * w + iu] = depth;
        let d = DepthMap::new(intr.width, intr.height, values, DepthKind::Aligned, 0).unwrap();
        let tracks =
            InstanceTracks::new(1, vec![tp(0, 0, src.0, src.1), tp(1, 0, dst.0, dst.1)]).unwrap();
        let f = motion_field(&tracks, &d, a, b, intr, 0, 1).unwrap();
        assert_eq!(f.pairs.len(), 1);
        f.pairs[0]
    }

    proptest! {
        #[test]
        fn resolution_doubling_invariance(
            q in prop::array::uniform4(0.1f64..1.0),
            t in prop::array::uniform3(-0.3f64..0.3),
            su in 10.0f64..50.0, sv in 10.0f64..50.0,
            du in -5.0f64..5.0, dv in -5.0f64..5.0,
            depth in 2.0f64..10.0,
        ) {
            let intr = Intrinsics::new(40.0, 45.0, 30.0, 29.0, 60, 60).unwrap();
            let a = Pose::identity();
            let b = Pose::from_quaternion([1.0, q[1] * 0.05, q[2] * 0.05, q[3] * 0.05], Vec3::from(t)).unwrap();
            let p1 = field_for(&intr, &a, &b, (su, sv), (su + du, sv + dv), depth);
            let p2 = field_for(&intr.scaled(2), &a, &b, (2.0 * su, 2.0 * sv), (2.0 * (su + du), 2.0 * (sv + dv)), depth);
            prop_assert!((p1.du - p2.du).abs() < 1e-9);
            prop_assert!((p1.dv - p2.dv).abs() < 1e-9);
        }

        #[test]
        fn strength_scales_with_displacement(
            disp in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20),
            k in 0.1f64..5.0,
        ) {
            let intr = cam();
            let build = |scale: f64| {
                let mut pts = Vec::new();
                for (i, &(dx, dy)) in disp.iter().enumerate() {
                    let (u, v) = (20.0 + 4.0 * i as f64, 50.0);
                    pts.push(tp(0, i as u64, u, v));
                    pts.push(tp(1, i as u64, u + scale * dx, v + scale * dy));
                }
                let tracks = InstanceTracks::new(1, pts).unwrap();
                let d = constant_depth(&intr, 3.0);
                let f = motion_field(&tracks, &d, &Pose::identity(), &Pose::identity(), &intr, 0, 1).unwrap();
                object_strength(&[f])
            };
            let (s1, sk) = (build(1.0), build(k));
            prop_assert!((sk - k * s1).abs() <= 1e-12 * (1.0 + sk));
        }

        #[test]
        fn strength_is_order_invariant(
            mags in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 0..50),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mk = |v: &[(f64, f64)]| MotionField {
                instance_id: 1,
                pairs: v.iter().enumerate().map(|(i, &(du, dv))| MotionPair { keypoint: i as u64, frame_i: 0, frame_j: 1, du, dv }).collect(),
                skipped: SkipCounts::default(),
            };
            let mut shuffled = mags.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (a, b) = (object_strength(&[mk(&mags)]), object_strength(&[mk(&shuffled)]));
            prop_assert!((a - b).abs() <= 1e-12);

            let objs: Vec<(u32, f64)> = mags.iter().enumerate().map(|(i, m)| (i as u32, m.0.abs())).collect();
            let mut objs_s = objs.clone();
            objs_s.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(video_motion_strength(&objs), video_motion_strength(&objs_s));
        }
    }
}
