use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::geometry::{Intrinsics, Point3, Pose, Vec3};
use crate::trajectory::Trajectory;

use super::{read_bytes, write_bytes, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
}

impl CameraModel {
    fn name(self) -> &'static str {
        match self {
            CameraModel::SimplePinhole => "SIMPLE_PINHOLE",
            CameraModel::Pinhole => "PINHOLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub id: u32,
    pub model: CameraModel,
    pub intrinsics: Intrinsics,
}

/// A 2D feature of an image; `point3d` is `None` for untriangulated features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
    pub point3d: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub image_id: u32,
    pub name: String,
    pub camera_id: u32,
    /// (w, x, y, z), unit norm.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub observations: Vec<Observation>,
    pose: Pose,
}

impl FrameRecord {
    pub fn new(
        image_id: u32,
        name: impl Into<String>,
        camera_id: u32,
        qvec: [f64; 4],
        tvec: [f64; 3],
        observations: Vec<Observation>,
    ) -> Result<Self, IngestError> {
        let norm = qvec.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 1e-12) {
            return Err(IngestError::Invalid(format!(
                "image {image_id}: quaternion norm {norm} cannot be normalized"
            )));
        }
        // Renormalize only when visibly off so that re-ingesting is a no-op.
        let qvec = if (norm - 1.0).abs() > 1e-12 {
            qvec.map(|c| c / norm)
        } else {
            qvec
        };
        let pose = Pose::from_quaternion(qvec, Vec3::from(tvec))
            .map_err(|e| IngestError::Invalid(format!("image {image_id}: {e}")))?;
        Ok(Self {
            image_id,
            name: name.into(),
            camera_id,
            qvec,
            tvec,
            observations,
            pose,
        })
    }

    pub fn from_pose(image_id: u32, name: impl Into<String>, camera_id: u32, pose: &Pose) -> Self {
        let t = pose.translation();
        Self::new(image_id, name, camera_id, pose.quaternion(), [t.x, t.y, t.z], Vec::new())
            .expect("a valid pose has a valid quaternion")
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    /// Name without its extension; the key for per-frame depth and mask files.
    pub fn stem(&self) -> &str {
        Path::new(&self.name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint {
    pub id: u64,
    pub position: Point3,
    pub color: [u8; 3],
    pub error: f64,
    /// (image_id, point2d index)
    pub track: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseCloud {
    pub points: Vec<CloudPoint>,
}

impl SparseCloud {
    pub fn positions(&self) -> impl Iterator<Item = &Point3> {
        self.points.iter().map(|p| &p.position)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Cameras, frames in name order, and the sparse cloud.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SfmModel {
    pub cameras: BTreeMap<u32, CameraRecord>,
    pub frames: Vec<FrameRecord>,
    pub points: SparseCloud,
}

impl SfmModel {
    /// Single-camera model with frames named `frame_0000.png`, ... and no points.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let camera = CameraRecord {
            id: 1,
            model: CameraModel::Pinhole,
            intrinsics: traj.intr,
        };
        let frames = traj
            .poses()
            .iter()
            .enumerate()
            .map(|(i, p)| FrameRecord::from_pose(i as u32 + 1, frame_name(i), 1, p))
            .collect();
        Self {
            cameras: BTreeMap::from([(1, camera)]),
            frames,
            points: SparseCloud::default(),
        }
    }

    pub fn intrinsics_of(&self, frame: &FrameRecord) -> &Intrinsics {
        &self.cameras[&frame.camera_id].intrinsics
    }

    pub fn sort_frames(&mut self) {
        self.frames.sort_by(|a, b| a.name.cmp(&b.name));
    }
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

struct Lines<'a> {
    file: PathBuf,
    lines: Vec<(usize, &'a str)>,
}

impl<'a> Lines<'a> {
    fn parse_err(&self, line: usize, message: impl Into<String>) -> IngestError {
        IngestError::Parse {
            file: self.file.clone(),
            line,
            message: message.into(),
        }
    }
}

fn data_lines<'a>(file: &Path, text: &'a str, keep_empty: bool) -> Lines<'a> {
    let lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .filter(|(_, l)| keep_empty || !l.trim().is_empty())
        .collect();
    Lines {
        file: file.to_path_buf(),
        lines,
    }
}

fn field<T: std::str::FromStr>(
    ctx: &Lines,
    line: usize,
    tokens: &[&str],
    idx: usize,
    what: &str,
) -> Result<T, IngestError> {
    let tok = tokens
        .get(idx)
        .ok_or_else(|| ctx.parse_err(line, format!("missing {what}")))?;
    let value: T = tok
        .parse()
        .map_err(|_| ctx.parse_err(line, format!("invalid {what} {tok:?}")))?;
    Ok(value)
}

fn float(ctx: &Lines, line: usize, tokens: &[&str], idx: usize, what: &str) -> Result<f64, IngestError> {
    let x: f64 = field(ctx, line, tokens, idx, what)?;
    if !x.is_finite() {
        return Err(ctx.parse_err(line, format!("non-finite {what}")));
    }
    Ok(x)
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| IngestError::Data {
        file: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
        message: "not valid UTF-8".into(),
    })
}

fn parse_cameras(file: &Path, text: &str) -> Result<BTreeMap<u32, CameraRecord>, IngestError> {
    let ctx = data_lines(file, text, false);
    let mut cameras = BTreeMap::new();
    for &(line, l) in &ctx.lines {
        let t: Vec<&str> = l.split_whitespace().collect();
        let id: u32 = field(&ctx, line, &t, 0, "camera id")?;
        let model_name = *t
            .get(1)
            .ok_or_else(|| ctx.parse_err(line, "missing camera model"))?;
        let width: u32 = field(&ctx, line, &t, 2, "width")?;
        let height: u32 = field(&ctx, line, &t, 3, "height")?;
        let (model, nparams) = match model_name {
            "SIMPLE_PINHOLE" => (CameraModel::SimplePinhole, 3),
            "PINHOLE" => (CameraModel::Pinhole, 4),
            other => {
                return Err(IngestError::UnsupportedModel {
                    file: file.to_path_buf(),
                    line,
                    model: other.to_string(),
                })
            }
        };
        if t.len() != 4 + nparams {
            return Err(ctx.parse_err(
                line,
                format!("{model_name} expects {nparams} parameters, got {}", t.len().saturating_sub(4)),
            ));
        }
        let p: Vec<f64> = (4..4 + nparams)
            .map(|i| float(&ctx, line, &t, i, "camera parameter"))
            .collect::<Result<_, _>>()?;
        let (fx, fy, cx, cy) = match model {
            CameraModel::SimplePinhole => (p[0], p[0], p[1], p[2]),
            CameraModel::Pinhole => (p[0], p[1], p[2], p[3]),
        };
        let intrinsics = Intrinsics::new(fx, fy, cx, cy, width, height)
            .map_err(|e| ctx.parse_err(line, e.to_string()))?;
        if cameras
            .insert(
                id,
                CameraRecord {
                    id,
                    model,
                    intrinsics,
                },
            )
            .is_some()
        {
            return Err(IngestError::Integrity {
                file: file.to_path_buf(),
                line,
                message: format!("duplicate camera id {id}"),
            });
        }
    }
    Ok(cameras)
}

fn parse_images(
    file: &Path,
    text: &str,
    cameras: &BTreeMap<u32, CameraRecord>,
) -> Result<Vec<FrameRecord>, IngestError> {
    let ctx = data_lines(file, text, true);
    // Blank lines are only meaningful as (empty) observation lines.
    let mut lines = ctx.lines.iter().peekable();
    let mut frames = Vec::new();
    let mut ids = HashSet::new();
    let mut names = HashSet::new();
    while let Some(&(line, l)) = lines.next() {
        if l.trim().is_empty() {
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 10 {
            return Err(ctx.parse_err(line, format!("image record needs 10 fields, got {}", t.len())));
        }
        let image_id: u32 = field(&ctx, line, &t, 0, "image id")?;
        let q: Vec<f64> = (1..5)
            .map(|i| float(&ctx, line, &t, i, "quaternion component"))
            .collect::<Result<_, _>>()?;
        let tv: Vec<f64> = (5..8)
            .map(|i| float(&ctx, line, &t, i, "translation component"))
            .collect::<Result<_, _>>()?;
        let camera_id: u32 = field(&ctx, line, &t, 8, "camera id")?;
        let name = t[9].to_string();
        if !cameras.contains_key(&camera_id) {
            return Err(IngestError::Integrity {
                file: file.to_path_buf(),
                line,
                message: format!("image {image_id} references unknown camera {camera_id}"),
            });
        }
        if !ids.insert(image_id) || !names.insert(name.clone()) {
            return Err(IngestError::Integrity {
                file: file.to_path_buf(),
                line,
                message: format!("duplicate image id {image_id} or name {name}"),
            });
        }
        let mut observations = Vec::new();
        if let Some(&&(pline, pl)) = lines.peek() {
            lines.next();
            let pt: Vec<&str> = pl.split_whitespace().collect();
            if !pt.len().is_multiple_of(3) {
                return Err(ctx.parse_err(pline, "2D points must come in (X, Y, POINT3D_ID) triples"));
            }
            for k in (0..pt.len()).step_by(3) {
                let x = float(&ctx, pline, &pt, k, "2D point x")?;
                let y = float(&ctx, pline, &pt, k + 1, "2D point y")?;
                let id: i64 = field(&ctx, pline, &pt, k + 2, "point3D id")?;
                let point3d = match id {
                    -1 => None,
                    id if id >= 0 => Some(id as u64),
                    _ => return Err(ctx.parse_err(pline, format!("invalid point3D id {id}"))),
                };
                observations.push(Observation { x, y, point3d });
            }
        }
        let frame = FrameRecord::new(
            image_id,
            name,
            camera_id,
            [q[0], q[1], q[2], q[3]],
            [tv[0], tv[1], tv[2]],
            observations,
        )
        .map_err(|e| ctx.parse_err(line, e.to_string()))?;
        frames.push(frame);
    }
    frames.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(frames)
}

fn parse_points(file: &Path, text: &str, image_ids: &HashSet<u32>) -> Result<SparseCloud, IngestError> {
    let ctx = data_lines(file, text, false);
    let mut points = Vec::with_capacity(ctx.lines.len());
    let mut ids = HashSet::new();
    for &(line, l) in &ctx.lines {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 8 || !(t.len() - 8).is_multiple_of(2) {
            return Err(ctx.parse_err(line, "point record needs 8 fields plus (IMAGE_ID, POINT2D_IDX) pairs"));
        }
        let id: u64 = field(&ctx, line, &t, 0, "point id")?;
        let xyz: Vec<f64> = (1..4)
            .map(|i| float(&ctx, line, &t, i, "coordinate"))
            .collect::<Result<_, _>>()?;
        let rgb: Vec<u8> = (4..7)
            .map(|i| field(&ctx, line, &t, i, "color component"))
            .collect::<Result<_, _>>()?;
        let error = float(&ctx, line, &t, 7, "reprojection error")?;
        let mut track = Vec::with_capacity((t.len() - 8) / 2);
        for k in (8..t.len()).step_by(2) {
            let image: u32 = field(&ctx, line, &t, k, "track image id")?;
            let idx: u32 = field(&ctx, line, &t, k + 1, "track point2D index")?;
            if !image_ids.contains(&image) {
                return Err(IngestError::Integrity {
                    file: file.to_path_buf(),
                    line,
                    message: format!("point {id} references unknown image {image}"),
                });
            }
            track.push((image, idx));
        }
        if !ids.insert(id) {
            return Err(IngestError::Integrity {
                file: file.to_path_buf(),
                line,
                message: format!("duplicate point id {id}"),
            });
        }
        points.push(CloudPoint {
            id,
            position: Point3::new(xyz[0], xyz[1], xyz[2]),
            color: [rgb[0], rgb[1], rgb[2]],
            error,
            track,
        });
    }
    Ok(SparseCloud { points })
}

/// Reads `cameras.txt`, `images.txt` and `points3D.txt` from `dir`.
pub fn parse_colmap_text(dir: &Path) -> Result<SfmModel, IngestError> {
    let cam_path = dir.join("cameras.txt");
    let img_path = dir.join("images.txt");
    let pts_path = dir.join("points3D.txt");
    let cameras = parse_cameras(&cam_path, &read_text(&cam_path)?)?;
    let frames = parse_images(&img_path, &read_text(&img_path)?, &cameras)?;
    let image_ids: HashSet<u32> = frames.iter().map(|f| f.image_id).collect();
    let points = parse_points(&pts_path, &read_text(&pts_path)?, &image_ids)?;
    Ok(SfmModel {
        cameras,
        frames,
        points,
    })
}

/// 17 significant digits: lossless for every f64.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn serialize_colmap_text(model: &SfmModel, dir: &Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let mut cams = String::from(
        "# Camera list with one line of data per camera:\n\
         #   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n",
    );
    let _ = writeln!(cams, "# Number of cameras: {}", model.cameras.len());
    for c in model.cameras.values() {
        let k = &c.intrinsics;
        let params = match c.model {
            CameraModel::SimplePinhole => vec![k.fx, k.cx, k.cy],
            CameraModel::Pinhole => vec![k.fx, k.fy, k.cx, k.cy],
        };
        let params: Vec<String> = params.into_iter().map(num).collect();
        let _ = writeln!(
            cams,
            "{} {} {} {} {}",
            c.id,
            c.model.name(),
            k.width,
            k.height,
            params.join(" ")
        );
    }

    let mut imgs = String::from(
        "# Image list with two lines of data per image:\n\
         #   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n\
         #   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    let _ = writeln!(imgs, "# Number of images: {}", model.frames.len());
    for f in &model.frames {
        let q: Vec<String> = f.qvec.iter().map(|&x| num(x)).collect();
        let t: Vec<String> = f.tvec.iter().map(|&x| num(x)).collect();
        let _ = writeln!(
            imgs,
            "{} {} {} {} {}",
            f.image_id,
            q.join(" "),
            t.join(" "),
            f.camera_id,
            f.name
        );
        let obs: Vec<String> = f
            .observations
            .iter()
            .map(|o| {
                let id = o.point3d.map_or(-1, |i| i as i64);
                format!("{} {} {id}", num(o.x), num(o.y))
            })
            .collect();
        let _ = writeln!(imgs, "{}", obs.join(" "));
    }

    let mut pts = String::from(
        "# 3D point list with one line of data per point:\n\
         #   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n",
    );
    let _ = writeln!(pts, "# Number of points: {}", model.points.len());
    for p in &model.points.points {
        let _ = write!(
            pts,
            "{} {} {} {} {} {} {} {}",
            p.id,
            num(p.position.x),
            num(p.position.y),
            num(p.position.z),
            p.color[0],
            p.color[1],
            p.color[2],
            num(p.error)
        );
        for (img, idx) in &p.track {
            let _ = write!(pts, " {img} {idx}");
        }
        pts.push('\n');
    }

    write_bytes(&dir.join("cameras.txt"), cams.as_bytes())?;
    write_bytes(&dir.join("images.txt"), imgs.as_bytes())?;
    write_bytes(&dir.join("points3D.txt"), pts.as_bytes())?;
    Ok(())
}
