//! Camera paths for conditioning: orbits and piecewise pose interpolation.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{camera_center, GeometryError, Intrinsics, Point3, Pose, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("orbit radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("elevation {0} rad must lie strictly inside (-pi/2, pi/2)")]
    InvalidElevation(f64),
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("interpolation parameter {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("need at least 2 anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("trajectory must contain at least one pose")]
    Empty,
    #[error("look-at is degenerate: eye coincides with target or view is parallel to up")]
    DegenerateLookAt,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
    pub intr: Intrinsics,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, intr: Intrinsics) -> Result<Self, TrajectoryError> {
        if poses.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        Ok(Self { poses, intr })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Camera at `eye` looking at `target`; image `y` points away from `up`.
pub fn look_at(eye: &Point3, target: &Point3, up: &Vec3) -> Result<Pose, TrajectoryError> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(TrajectoryError::DegenerateLookAt);
    }
    let z = forward.normalize();
    let x = z.cross(up);
    if x.norm() < 1e-12 {
        return Err(TrajectoryError::DegenerateLookAt);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Ok(Pose::from_center(rot, eye)?)
}

/// `n` cameras evenly spaced in azimuth around `center`, all looking at it
/// with world up `(0, 1, 0)`.
pub fn orbit_trajectory(
    center: &Point3,
    radius: f64,
    elevation: f64,
    n: usize,
    intr: Intrinsics,
) -> Result<Trajectory, TrajectoryError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(TrajectoryError::InvalidRadius(radius));
    }
    if !(elevation.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(TrajectoryError::InvalidElevation(elevation));
    }
    if n == 0 {
        return Err(TrajectoryError::ZeroCount);
    }
    let up = Vec3::new(0.0, 1.0, 0.0);
    let (se, ce) = elevation.sin_cos();
    let poses = (0..n)
        .map(|k| {
            let azimuth = std::f64::consts::TAU * k as f64 / n as f64;
            let (sa, ca) = azimuth.sin_cos();
            let eye = center + Vec3::new(ce * ca, se, ce * sa) * radius;
            look_at(&eye, center, &up)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Trajectory::new(poses, intr)
}

fn slerp(a: [f64; 4], b: [f64; 4], t: f64) -> [f64; 4] {
    let mut dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let mut b = b;
    if dot < 0.0 {
        b = b.map(|c| -c);
        dot = -dot;
    }
    let (wa, wb) = if dot > 1.0 - 1e-12 {
        (1.0 - t, t)
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    std::array::from_fn(|i| wa * a[i] + wb * b[i])
}

/// Constant-speed rotation interpolation with linear camera-centre motion.
pub fn interpolate_pose(a: &Pose, b: &Pose, t: f64) -> Result<Pose, TrajectoryError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(TrajectoryError::OutOfRange(t));
    }
    if t == 0.0 {
        return Ok(*a);
    }
    if t == 1.0 {
        return Ok(*b);
    }
    let q = slerp(a.quaternion(), b.quaternion(), t);
    let (ca, cb) = (camera_center(a), camera_center(b));
    let center = ca + (cb - ca) * t;
    let rot = *Pose::from_quaternion(q, Vec3::zeros())?.rotation();
    Ok(Pose::from_center(rot, &center)?)
}

/// Interpolates `per_segment` uniform steps between consecutive anchors;
/// every anchor appears verbatim in the output.
pub fn densify_trajectory(
    anchors: &[Pose],
    per_segment: usize,
    intr: Intrinsics,
) -> Result<Trajectory, TrajectoryError> {
    if anchors.len() < 2 {
        return Err(TrajectoryError::TooFewAnchors(anchors.len()));
    }
    if per_segment == 0 {
        return Err(TrajectoryError::ZeroCount);
    }
    let mut poses = Vec::with_capacity((anchors.len() - 1) * per_segment + 1);
    for pair in anchors.windows(2) {
        for k in 0..per_segment {
            poses.push(interpolate_pose(&pair[0], &pair[1], k as f64 / per_segment as f64)?);
        }
    }
    poses.push(*anchors.last().expect("at least two anchors"));
    Trajectory::new(poses, intr)
}
