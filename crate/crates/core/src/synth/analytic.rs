//! Expected per-object motion strength computed straight from the scene
//! description.
//!
//! Deliberately self-contained: plain `[f64; 3]` arithmetic, its own camera
//! construction, projection and z-buffer. Nothing here calls into the
//! geometry or motion modules, so agreement with the pipeline is evidence
//! rather than tautology.

use super::{sample_points, CameraPath, SceneConfig};

const MIN_Z: f64 = 1e-6;

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit(a: V3) -> V3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Rows of the world-to-camera rotation plus the camera centre.
struct Cam {
    rows: [V3; 3],
    center: V3,
}

impl Cam {
    fn for_frame(config: &SceneConfig, frame: usize) -> Self {
        let center = config.camera_center_at(frame);
        let rows = match &config.camera_path {
            CameraPath::Orbit { center: target, .. } => {
                let z = unit(sub(*target, center));
                let x = unit(cross(z, [0.0, 1.0, 0.0]));
                let y = cross(z, x);
                [x, y, z]
            }
            _ => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
        Self { rows, center }
    }

    fn to_camera(&self, p: V3) -> V3 {
        let d = sub(p, self.center);
        [dot(self.rows[0], d), dot(self.rows[1], d), dot(self.rows[2], d)]
    }
}

/// Pixel coordinates and depth, or `None` behind the camera.
fn pixel(config: &SceneConfig, cam: &Cam, p: V3) -> Option<(f64, f64, f64)> {
    let k = &config.intr;
    let c = cam.to_camera(p);
    if c[2] <= MIN_Z {
        return None;
    }
    Some((k.fx * c[0] / c[2] + k.cx, k.fy * c[1] / c[2] + k.cy, c[2]))
}

fn cell(config: &SceneConfig, u: f64, v: f64) -> Option<usize> {
    let (w, h) = (config.intr.width as f64, config.intr.height as f64);
    let (ru, rv) = (u.round(), v.round());
    if ru >= 0.0 && rv >= 0.0 && ru < w && rv < h {
        Some(rv as usize * config.intr.width as usize + ru as usize)
    } else {
        None
    }
}

/// For each object, which of its points wins its pixel in `frame`.
fn visibility(config: &SceneConfig, pts: &super::ScenePoints, frame: usize) -> Vec<Vec<bool>> {
    let cam = Cam::for_frame(config, frame);
    let n = config.intr.width as usize * config.intr.height as usize;
    let mut best = vec![f64::INFINITY; n];
    // owner: usize::MAX = background, else (object << 32 | point)
    let mut owner = vec![usize::MAX; n];
    for p in &pts.background {
        if let Some((u, v, z)) = pixel(config, &cam, *p) {
            if let Some(i) = cell(config, u, v) {
                if z < best[i] {
                    best[i] = z;
                    owner[i] = usize::MAX;
                }
            }
        }
    }
    for (k, (obj, ps)) in config.objects.iter().zip(&pts.objects).enumerate() {
        for (m, p0) in ps.iter().enumerate() {
            if let Some((u, v, z)) = pixel(config, &cam, obj.position_at(p0, frame)) {
                if let Some(i) = cell(config, u, v) {
                    if z < best[i] {
                        best[i] = z;
                        owner[i] = (k << 32) | m;
                    }
                }
            }
        }
    }
    let mut vis: Vec<Vec<bool>> = pts.objects.iter().map(|ps| vec![false; ps.len()]).collect();
    for o in owner.into_iter().filter(|&o| o != usize::MAX) {
        vis[o >> 32][o & 0xffff_ffff] = true;
    }
    vis
}

/// Per-object strength at the default frame gap of 1.
pub fn analytic_strength(config: &SceneConfig) -> Vec<(u8, f64)> {
    analytic_strength_with_gap(config, 1)
}

/// Mean over keypoints visible in both frames `i` and `i + gap` of the
/// image-size-normalized distance between the point's true position in `j`
/// and the reprojection of its true position in `i` through camera `j`.
pub fn analytic_strength_with_gap(config: &SceneConfig, gap: usize) -> Vec<(u8, f64)> {
    let gap = gap.max(1);
    let pts = sample_points(config);
    let vis: Vec<Vec<Vec<bool>>> = (0..config.frames).map(|f| visibility(config, &pts, f)).collect();
    let (w, h) = (config.intr.width as f64, config.intr.height as f64);
    config
        .objects
        .iter()
        .enumerate()
        .map(|(k, obj)| {
            let (mut sum, mut n) = (0.0, 0usize);
            for i in 0..config.frames.saturating_sub(gap) {
                let j = i + gap;
                let (cam_i, cam_j) = (Cam::for_frame(config, i), Cam::for_frame(config, j));
                for (m, p0) in pts.objects[k].iter().enumerate() {
                    if !(vis[i][k][m] && vis[j][k][m]) {
                        continue;
                    }
                    let here = obj.position_at(p0, i);
                    let there = obj.position_at(p0, j);
                    if pixel(config, &cam_i, here).is_none() {
                        continue;
                    }
                    let (Some((ru, rv, _)), Some((tu, tv, _))) =
                        (pixel(config, &cam_j, here), pixel(config, &cam_j, there))
                    else {
                        continue;
                    };
                    sum += ((tu - ru) / w).hypot((tv - rv) / h);
                    n += 1;
                }
            }
            (obj.instance_id, if n == 0 { 0.0 } else { sum / n as f64 })
        })
        .collect()
}
