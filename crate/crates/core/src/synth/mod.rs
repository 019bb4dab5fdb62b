//! Synthetic point-based 4D scenes with exact ground truth.
//!
//! A scene is a static background cloud plus rigid objects that translate
//! and spin about the vertical axis, filmed along a known camera path. The
//! generator emits every file the annotate pipeline consumes; [`analytic`]
//! recomputes the expected motion strength on its own code path.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{DepthKind, DepthMap};
use crate::geometry::{nearest_pixel, project_point, Intrinsics, Point3, Pose, Vec3};
use crate::ingest::{
    serialize_colmap_text, write_pfm, write_pgm_mask, write_tracks_jsonl, CameraModel,
    CameraRecord, CloudPoint, FrameRecord, IngestError, SfmModel, SparseCloud,
};
use crate::motion::{InstanceMask, InstanceTracks, TrackPoint};
use crate::pipeline::layout;
use crate::trajectory::look_at;

pub mod analytic;

pub use analytic::{analytic_strength, analytic_strength_with_gap};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("frame {0} has no visible object points")]
    NoVisibleObjects(usize),
    #[error("frame {0} has a constant depth raster; relative depth cannot be normalized")]
    FlatDepth(usize),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraPath {
    /// Fixed orientation (looking down +z); centre moves by `velocity` per frame.
    Linear { start: [f64; 3], velocity: [f64; 3] },
    /// Forward motion along +z by `speed` per frame.
    Zoom { start: [f64; 3], speed: f64 },
    /// Looks at `center`; azimuth advances by `step` radians per frame.
    Orbit {
        center: [f64; 3],
        radius: f64,
        elevation: f64,
        start_azimuth: f64,
        step: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundConfig {
    pub count: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectConfig {
    pub instance_id: u8,
    pub count: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// World units per frame.
    pub velocity: [f64; 3],
    /// Radians per frame about the world y axis through the box centre.
    pub rotation_rate: f64,
}

impl ObjectConfig {
    pub fn box_center(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.min[i] + self.max[i]))
    }

    /// Ground-truth world position at `frame` of a point sampled at `p0` in frame 0.
    pub fn position_at(&self, p0: &[f64; 3], frame: usize) -> [f64; 3] {
        let c = self.box_center();
        let f = frame as f64;
        let (s, co) = (self.rotation_rate * f).sin_cos();
        let (dx, dy, dz) = (p0[0] - c[0], p0[1] - c[1], p0[2] - c[2]);
        [
            c[0] + self.velocity[0] * f + co * dx + s * dz,
            c[1] + self.velocity[1] * f + dy,
            c[2] + self.velocity[2] * f - s * dx + co * dz,
        ]
    }
}

/// Affine corruption `(d − b) / a` applied before min-max normalization, with
/// optional multiplicative per-pixel noise of relative amplitude `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthCorruption {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub intr: Intrinsics,
    pub camera_path: CameraPath,
    pub background: BackgroundConfig,
    pub objects: Vec<ObjectConfig>,
    pub frames: usize,
    pub depth_corruption: DepthCorruption,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        self.intr
            .validate()
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        if self.frames < 2 {
            return bad(format!("frames = {} (need >= 2)", self.frames));
        }
        let mut ids = std::collections::HashSet::new();
        for o in &self.objects {
            if o.instance_id == 0 || !ids.insert(o.instance_id) {
                return bad(format!("instance id {} is zero or repeated", o.instance_id));
            }
            if o.count == 0 {
                return bad(format!("object {} has no points", o.instance_id));
            }
        }
        let c = &self.depth_corruption;
        if !(c.a > 0.0 && c.a.is_finite() && c.b.is_finite()) {
            return bad(format!("depth corruption a = {} must be positive", c.a));
        }
        if !(0.0..1.0).contains(&c.noise) {
            return bad(format!("noise {} outside [0, 1)", c.noise));
        }
        if let CameraPath::Orbit { radius, elevation, .. } = self.camera_path {
            if !(radius > 0.0) || !(elevation.abs() < std::f64::consts::FRAC_PI_2) {
                return bad("orbit needs radius > 0 and |elevation| < pi/2".into());
            }
        }
        Ok(())
    }

    /// Camera centre at `frame`.
    pub fn camera_center_at(&self, frame: usize) -> [f64; 3] {
        let f = frame as f64;
        match &self.camera_path {
            CameraPath::Linear { start, velocity } => {
                std::array::from_fn(|i| start[i] + velocity[i] * f)
            }
            CameraPath::Zoom { start, speed } => [start[0], start[1], start[2] + speed * f],
            CameraPath::Orbit {
                center,
                radius,
                elevation,
                start_azimuth,
                step,
            } => {
                let a = start_azimuth + step * f;
                let (se, ce) = elevation.sin_cos();
                [
                    center[0] + radius * ce * a.cos(),
                    center[1] + radius * se,
                    center[2] + radius * ce * a.sin(),
                ]
            }
        }
    }

    /// Static zoom-in shot of one object; `object_velocity` is per frame.
    pub fn zoom_preset(seed: u64, object_velocity: [f64; 3]) -> Self {
        Self {
            seed,
            intr: Intrinsics::centered(100.0, 128, 128).expect("valid"),
            camera_path: CameraPath::Zoom {
                start: [0.0, 0.0, 0.0],
                speed: 0.15,
            },
            background: BackgroundConfig {
                count: 3000,
                min: [-5.0, -5.0, 12.0],
                max: [5.0, 5.0, 16.0],
            },
            objects: vec![ObjectConfig {
                instance_id: 1,
                count: 300,
                min: [-0.6, -0.6, 5.4],
                max: [0.6, 0.6, 6.6],
                velocity: object_velocity,
                rotation_rate: 0.0,
            }],
            frames: 6,
            depth_corruption: DepthCorruption {
                a: 2.0,
                b: 0.5,
                noise: 0.0,
            },
        }
    }

    /// A randomized but always-valid scene: linear, zoom or orbit camera and
    /// one to three objects, some of them static.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = rng.gen_range(64..=160u32);
        let height = rng.gen_range(64..=160u32);
        let focal = rng.gen_range(0.55..0.8) * width.min(height) as f64;
        let intr = Intrinsics::centered(focal, width, height).expect("valid");
        let target = [0.0, 0.0, 6.0];
        let camera_path = match rng.gen_range(0..3) {
            0 => CameraPath::Linear {
                start: [0.0, 0.0, 0.0],
                velocity: [
                    rng.gen_range(-0.08..0.08),
                    rng.gen_range(-0.08..0.08),
                    rng.gen_range(-0.08..0.08),
                ],
            },
            1 => CameraPath::Zoom {
                start: [0.0, 0.0, 0.0],
                speed: rng.gen_range(0.03..0.15),
            },
            _ => CameraPath::Orbit {
                center: target,
                radius: 6.0,
                elevation: rng.gen_range(-0.1..0.1),
                start_azimuth: -std::f64::consts::FRAC_PI_2,
                step: rng.gen_range(-0.03..0.03),
            },
        };
        let n_objects = rng.gen_range(1..=3);
        let objects = (0..n_objects)
            .map(|k| {
                let cx = rng.gen_range(-1.2..1.2);
                let cy = rng.gen_range(-1.2..1.2);
                let cz = target[2] + rng.gen_range(-0.8..0.8);
                let half = rng.gen_range(0.3..0.6);
                let moving = rng.gen_bool(0.6);
                let velocity = if moving {
                    [
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.05..0.05),
                    ]
                } else {
                    [0.0; 3]
                };
                ObjectConfig {
                    instance_id: k as u8 + 1,
                    count: rng.gen_range(150..400),
                    min: [cx - half, cy - half, cz - half],
                    max: [cx + half, cy + half, cz + half],
                    velocity,
                    rotation_rate: if moving { rng.gen_range(-0.05..0.05) } else { 0.0 },
                }
            })
            .collect();
        Self {
            seed,
            intr,
            camera_path,
            background: BackgroundConfig {
                count: 3000,
                min: [-5.0, -5.0, 12.0],
                max: [5.0, 5.0, 18.0],
            },
            objects,
            frames: rng.gen_range(3..=7),
            depth_corruption: DepthCorruption {
                a: rng.gen_range(0.5..3.0),
                b: rng.gen_range(-2.0..2.0),
                noise: 0.0,
            },
        }
    }
}

/// Sampled scene content: background positions and frame-0 object points.
pub struct ScenePoints {
    pub background: Vec<[f64; 3]>,
    pub objects: Vec<Vec<[f64; 3]>>,
}

fn sample_box(rng: &mut ChaCha8Rng, min: &[f64; 3], max: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| {
        if min[i] < max[i] {
            rng.gen_range(min[i]..max[i])
        } else {
            min[i]
        }
    })
}

pub fn sample_points(config: &SceneConfig) -> ScenePoints {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bg = &config.background;
    let background = (0..bg.count)
        .map(|_| sample_box(&mut rng, &bg.min, &bg.max))
        .collect();
    let objects = config
        .objects
        .iter()
        .map(|o| (0..o.count).map(|_| sample_box(&mut rng, &o.min, &o.max)).collect())
        .collect();
    ScenePoints {
        background,
        objects,
    }
}

fn camera_pose(config: &SceneConfig, frame: usize) -> Result<Pose, SynthError> {
    let eye = Point3::from(config.camera_center_at(frame));
    let pose = match &config.camera_path {
        CameraPath::Orbit { center, .. } => {
            look_at(&eye, &Point3::from(*center), &Vec3::new(0.0, 1.0, 0.0))
                .map_err(|e| SynthError::InvalidConfig(e.to_string()))?
        }
        _ => Pose::from_center(nalgebra::Matrix3::identity(), &eye)
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?,
    };
    Ok(pose)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub name: String,
    /// Min and max of the corrupted depth before normalization.
    pub rel_min: f64,
    pub rel_max: f64,
    pub visible_object_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub instance: u8,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema: u32,
    pub config: SceneConfig,
    pub frames: Vec<FrameTruth>,
    pub objects: Vec<ObjectTruth>,
}

/// Everything a generated scene consists of, in memory.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub model: SfmModel,
    pub gt_depth: Vec<DepthMap>,
    pub rel_depth: Vec<DepthMap>,
    pub masks: Vec<InstanceMask>,
    pub tracks: Vec<InstanceTracks>,
    pub truth: GroundTruth,
}

#[derive(Clone, Copy, PartialEq)]
enum Owner {
    Empty,
    Background,
    Object(usize, usize),
}

pub fn generate_scene(config: &SceneConfig) -> Result<SceneBundle, SynthError> {
    config.validate()?;
    let intr = config.intr;
    let (w, h) = (intr.width as usize, intr.height as usize);
    let pts = sample_points(config);
    let background: Vec<Point3> = pts.background.iter().map(|p| Point3::from(*p)).collect();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);

    let mut frames = Vec::with_capacity(config.frames);
    let mut gt_depth = Vec::with_capacity(config.frames);
    let mut rel_depth = Vec::with_capacity(config.frames);
    let mut masks = Vec::with_capacity(config.frames);
    let mut truth_frames = Vec::with_capacity(config.frames);
    let mut track_points: Vec<Vec<TrackPoint>> = vec![Vec::new(); config.objects.len()];

    for f in 0..config.frames {
        let pose = camera_pose(config, f)?;
        let mut zbuf = vec![f64::INFINITY; w * h];
        let mut owner = vec![Owner::Empty; w * h];
        let mut splat = |p: &Point3, who: Owner| {
            if let Ok(pr) = project_point(&pose, &intr, p) {
                if let Some((u, v)) = nearest_pixel(pr.u, pr.v, intr.width, intr.height) {
                    let i = v * w + u;
                    if pr.depth < zbuf[i] {
                        zbuf[i] = pr.depth;
                        owner[i] = who;
                    }
                }
            }
        };
        for p in &background {
            splat(p, Owner::Background);
        }
        let positions: Vec<Vec<Point3>> = config
            .objects
            .iter()
            .zip(&pts.objects)
            .map(|(o, ps)| ps.iter().map(|p| Point3::from(o.position_at(p, f))).collect())
            .collect();
        for (k, ps) in positions.iter().enumerate() {
            for (n, p) in ps.iter().enumerate() {
                splat(p, Owner::Object(k, n));
            }
        }

        let depth: Vec<f64> = zbuf.iter().map(|&z| if z.is_finite() { z } else { 0.0 }).collect();

        // Observations: visible iff inside the raster and nearest in the z-buffer.
        let mut visible_count = 0;
        for (k, ps) in positions.iter().enumerate() {
            for (n, p) in ps.iter().enumerate() {
                let Ok(pr) = project_point(&pose, &intr, p) else { continue };
                let visible = nearest_pixel(pr.u, pr.v, intr.width, intr.height)
                    .map(|(u, v)| owner[v * w + u] == Owner::Object(k, n))
                    .unwrap_or(false);
                visible_count += visible as usize;
                track_points[k].push(TrackPoint {
                    frame: f,
                    keypoint: n as u64,
                    u: pr.u,
                    v: pr.v,
                    visible,
                });
            }
        }
        if !config.objects.is_empty() && visible_count == 0 {
            return Err(SynthError::NoVisibleObjects(f));
        }

        let c = &config.depth_corruption;
        let corrupted: Vec<f64> = depth
            .iter()
            .map(|&d| {
                let d = if d > 0.0 && c.noise > 0.0 {
                    d * (1.0 + noise_rng.gen_range(-c.noise..=c.noise))
                } else {
                    d
                };
                (d - c.b) / c.a
            })
            .collect();
        let lo = corrupted.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = corrupted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(SynthError::FlatDepth(f));
        }
        let rel: Vec<f64> = corrupted
            .iter()
            .map(|x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect();

        let mask: Vec<u8> = owner
            .iter()
            .map(|o| match o {
                Owner::Object(k, _) => config.objects[*k].instance_id,
                _ => 0,
            })
            .collect();

        let name = crate::ingest::frame_name(f);
        frames.push(FrameRecord::from_pose(f as u32 + 1, name.clone(), 1, &pose));
        let mk = |values: Vec<f64>, kind| {
            DepthMap::new(intr.width, intr.height, values, kind, f)
                .map_err(|e| SynthError::InvalidConfig(e.to_string()))
        };
        gt_depth.push(mk(depth, DepthKind::GroundTruth)?);
        rel_depth.push(mk(rel, DepthKind::Relative)?);
        masks.push(
            InstanceMask::new(intr.width, intr.height, mask)
                .map_err(|e| SynthError::InvalidConfig(e.to_string()))?,
        );
        truth_frames.push(FrameTruth {
            name,
            rel_min: lo,
            rel_max: hi,
            visible_object_points: visible_count,
        });
    }

    let tracks = config
        .objects
        .iter()
        .zip(track_points)
        .map(|(o, pts)| {
            InstanceTracks::new(o.instance_id as u32, pts)
                .map_err(|e| SynthError::InvalidConfig(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let points = SparseCloud {
        points: background
            .iter()
            .enumerate()
            .map(|(i, p)| CloudPoint {
                id: i as u64 + 1,
                position: *p,
                color: [128, 128, 128],
                error: 0.0,
                track: Vec::new(),
            })
            .collect(),
    };
    let model = SfmModel {
        cameras: BTreeMap::from([(
            1,
            CameraRecord {
                id: 1,
                model: CameraModel::Pinhole,
                intrinsics: intr,
            },
        )]),
        frames,
        points,
    };
    let objects = analytic_strength(config)
        .into_iter()
        .map(|(instance, strength)| ObjectTruth { instance, strength })
        .collect();
    Ok(SceneBundle {
        model,
        gt_depth,
        rel_depth,
        masks,
        tracks,
        truth: GroundTruth {
            schema: 1,
            config: config.clone(),
            frames: truth_frames,
            objects,
        },
    })
}

impl SceneBundle {
    /// Writes the standard video layout into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        let mkdir = |p: &Path| {
            std::fs::create_dir_all(p).map_err(|source| IngestError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        serialize_colmap_text(&self.model, &dir.join(layout::COLMAP_DIR))?;
        for sub in [layout::DEPTH_DIR, layout::MASK_DIR, layout::GT_DEPTH_DIR] {
            mkdir(&dir.join(sub))?;
        }
        for (i, frame) in self.model.frames.iter().enumerate() {
            let stem = frame.stem();
            write_pfm(&self.rel_depth[i], &dir.join(layout::DEPTH_DIR).join(format!("{stem}.pfm")))?;
            write_pfm(&self.gt_depth[i], &dir.join(layout::GT_DEPTH_DIR).join(format!("{stem}.pfm")))?;
            write_pgm_mask(&self.masks[i], &dir.join(layout::MASK_DIR).join(format!("{stem}.pgm")))?;
        }
        write_tracks_jsonl(&self.tracks, &dir.join(layout::TRACKS_FILE))?;
        let json = serde_json::to_string_pretty(&self.truth)
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        let truth_path = dir.join(layout::TRUTH_FILE);
        std::fs::write(&truth_path, json + "\n").map_err(|source| IngestError::Io {
            path: truth_path,
            source,
        })?;
        Ok(())
    }
}
