//! Pinhole camera model, world/camera/pixel transforms and Plücker rays.
//!
//! Conventions: poses map world to camera (`p_cam = R * p_world + t`), the
//! camera looks down `+z` with `x` to the right and `y` down, and integer
//! pixel `(i, j)` is the continuous sample point `(i, j)` (no half-pixel
//! offset).

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Points with camera-space depth at or below this are treated as behind the camera.
pub const EPS_Z: f64 = 1e-6;

/// Orthonormality / determinant tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid depth {0}; must be > 0")]
    InvalidDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det 1 (max deviation {0:e})")]
    InvalidRotation(f64),
    #[error("invalid quaternion: {0}")]
    InvalidQuaternion(String),
}

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Square pixels with the principal point at the image centre.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width < 1 || self.height < 1 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image size {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx = {} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy = {} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// `K⁻¹ · (u, v, 1)ᵀ`.
    pub fn unproject(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Rescale focal lengths, principal point and image size by `factor`.
    pub fn scaled(&self, factor: u32) -> Self {
        let s = factor as f64;
        Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: self.width * factor,
            height: self.height * factor,
        }
    }
}

/// Rounds a continuous pixel coordinate to the nearest integer pixel,
/// returning `None` when it falls outside the raster.
pub fn nearest_pixel(u: f64, v: f64, width: u32, height: u32) -> Option<(usize, usize)> {
    let (ui, vi) = (u.round(), v.round());
    if !(ui >= 0.0 && vi >= 0.0 && ui < width as f64 && vi < height as f64) {
        return None;
    }
    Some((ui as usize, vi as usize))
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let dev = rotation_deviation(&rotation);
        if !(dev <= ROTATION_TOL) || !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidRotation(dev));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose from a (w, x, y, z) quaternion, which is normalized first.
    pub fn from_quaternion(q: [f64; 4], translation: Vec3) -> Result<Self, GeometryError> {
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeometryError::InvalidQuaternion(format!(
                "norm {norm} cannot be normalized"
            )));
        }
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::new(*uq.to_rotation_matrix().matrix(), translation)
    }

    /// Pose whose camera sits at `center` with world-to-camera rotation `rotation`.
    pub fn from_center(rotation: Matrix3<f64>, center: &Point3) -> Result<Self, GeometryError> {
        let t = -(rotation * center.coords);
        Self::new(rotation, t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Unit quaternion (w, x, y, z) with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let c = q.quaternion().coords; // (x, y, z, w)
        let sign = if c[3] < 0.0 { -1.0 } else { 1.0 };
        [sign * c[3], sign * c[0], sign * c[1], sign * c[2]]
    }

    pub fn world_to_camera(&self, p: &Point3) -> Vec3 {
        self.rotation * p.coords + self.translation
    }

    pub fn camera_to_world(&self, p_cam: &Vec3) -> Point3 {
        Point3::from(self.rotation.transpose() * (p_cam - self.translation))
    }
}

/// Largest elementwise deviation of `RᵀR` from identity, or of `det R` from 1.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let det = (r.determinant() - 1.0).abs();
    if ortho.is_nan() || det.is_nan() {
        return f64::NAN;
    }
    ortho.max(det)
}

/// Continuous pixel position plus camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn project_point(
    pose: &Pose,
    intr: &Intrinsics,
    p: &Point3,
) -> Result<Projection, GeometryError> {
    let pc = pose.world_to_camera(p);
    if !(pc.z > EPS_Z) {
        return Err(GeometryError::BehindCamera { z: pc.z });
    }
    Ok(Projection {
        u: intr.fx * pc.x / pc.z + intr.cx,
        v: intr.fy * pc.y / pc.z + intr.cy,
        depth: pc.z,
    })
}

/// Lifts pixel `(u, v)` at camera depth `depth` to a world point.
pub fn backproject_pixel(
    pose: &Pose,
    intr: &Intrinsics,
    u: f64,
    v: f64,
    depth: f64,
) -> Result<Point3, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::InvalidDepth(depth));
    }
    let kp_cam = intr.unproject(u, v) * depth;
    Ok(pose.camera_to_world(&kp_cam))
}

pub fn camera_center(pose: &Pose) -> Point3 {
    Point3::from(-(pose.rotation.transpose() * pose.translation))
}

/// World-space viewing ray through pixel `(u, v)`: (camera centre, unit direction).
pub fn pixel_ray(pose: &Pose, intr: &Intrinsics, u: f64, v: f64) -> (Point3, Vec3) {
    let dir = (pose.rotation.transpose() * intr.unproject(u, v)).normalize();
    (camera_center(pose), dir)
}

/// A line in Plücker coordinates: unit direction and moment `o × d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerRay {
    pub direction: Vec3,
    pub moment: Vec3,
}

impl PluckerRay {
    /// `direction` is normalized before the moment is formed.
    pub fn from_origin_direction(origin: &Point3, direction: &Vec3) -> Self {
        let d = direction.normalize();
        Self {
            direction: d,
            moment: origin.coords.cross(&d),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (d, m) = (&self.direction, &self.moment);
        [d.x, d.y, d.z, m.x, m.y, m.z]
    }
}

pub fn plucker_ray(pose: &Pose, intr: &Intrinsics, u: f64, v: f64) -> PluckerRay {
    let (o, d) = pixel_ray(pose, intr, u, v);
    PluckerRay::from_origin_direction(&o, &d)
}

/// Dense `height × width × 6` ray map, row-major, channels `(dx, dy, dz, mx, my, mz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl PluckerMap {
    pub fn at(&self, u: usize, v: usize) -> &[f64] {
        let idx = (v * self.width as usize + u) * 6;
        &self.data[idx..idx + 6]
    }

    pub fn rays(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(6)
    }
}

pub fn plucker_map(pose: &Pose, intr: &Intrinsics) -> PluckerMap {
    let (w, h) = (intr.width as usize, intr.height as usize);
    let mut data = Vec::with_capacity(w * h * 6);
    for v in 0..h {
        for u in 0..w {
            data.extend_from_slice(&plucker_ray(pose, intr, u as f64, v as f64).to_array());
        }
    }
    PluckerMap {
        width: intr.width,
        height: intr.height,
        data,
    }
}
