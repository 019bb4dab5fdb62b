//! Per-video annotation, batch execution and report filtering.
//!
//! A video directory follows [`layout`]: COLMAP text in `colmap/`, one
//! relative-depth PFM per frame in `depth/`, one PGM instance mask per frame
//! in `masks/` and all keypoint tracks in `tracks.jsonl`. Per-frame files are
//! matched to COLMAP images by file stem, and track frame indices refer to
//! the position of the image in name order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{align_depth, rasterize_sparse_depth, DepthKind, DepthMap, DEFAULT_MIN_SAMPLES};
use crate::geometry::Intrinsics;
use crate::ingest::{parse_colmap_text, read_pfm, read_pgm_mask, read_tracks_jsonl, IngestError};
use crate::motion::{
    motion_field, object_strength, sample_keypoints, FrameAlignment, MotionReport,
    ObjectStrength, SkipCounts, DEFAULT_FRAME_GAP, DEFAULT_GRID_STEP, DEFAULT_THRESHOLD,
};

pub mod layout {
    pub const COLMAP_DIR: &str = "colmap";
    pub const DEPTH_DIR: &str = "depth";
    pub const MASK_DIR: &str = "masks";
    pub const TRACKS_FILE: &str = "tracks.jsonl";
    /// Written by the synthetic generator only; never read by `annotate`.
    pub const GT_DEPTH_DIR: &str = "gt_depth";
    pub const TRUTH_FILE: &str = "ground_truth.json";
}

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// JSON Schema (draft 2020-12) every report conforms to.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{0}")]
    Inconsistent(String),
    #[error("duplicate video id {0:?}")]
    DuplicateVideo(String),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub frame_gap: usize,
    pub min_sparse: usize,
    pub threshold: f64,
    pub grid_step: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            frame_gap: DEFAULT_FRAME_GAP,
            min_sparse: DEFAULT_MIN_SAMPLES,
            threshold: DEFAULT_THRESHOLD,
            grid_step: DEFAULT_GRID_STEP,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.frame_gap == 0 {
            return Err(PipelineError::InvalidParams("frame gap must be >= 1".into()));
        }
        if self.min_sparse == 0 {
            return Err(PipelineError::InvalidParams("min sparse must be >= 1".into()));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(PipelineError::InvalidParams(format!(
                "threshold {} must be finite and >= 0",
                self.threshold
            )));
        }
        if self.grid_step == 0 {
            return Err(PipelineError::InvalidParams("grid step must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoJob {
    pub video_id: String,
    pub colmap_dir: PathBuf,
    pub depth_dir: PathBuf,
    pub mask_dir: PathBuf,
    pub tracks_path: PathBuf,
    pub params: Params,
}

impl VideoJob {
    /// Job for a directory in the standard layout; the id is the directory name.
    pub fn from_dir(dir: &Path, params: Params) -> Self {
        let video_id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Self {
            video_id,
            colmap_dir: dir.join(layout::COLMAP_DIR),
            depth_dir: dir.join(layout::DEPTH_DIR),
            mask_dir: dir.join(layout::MASK_DIR),
            tracks_path: dir.join(layout::TRACKS_FILE),
            params,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub frame: usize,
    pub name: String,
    pub alpha: f64,
    pub beta: f64,
    pub n_sparse: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub instance: u32,
    pub strength: f64,
    pub n_pairs: usize,
    pub skipped: SkipCounts,
}

/// The persisted per-video result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema: u32,
    pub tool_version: String,
    pub video_id: String,
    pub status: Status,
    pub error: Option<String>,
    pub n_frames: usize,
    pub per_frame: Vec<FrameEntry>,
    pub objects: Vec<ObjectEntry>,
    pub motion_strength: f64,
    pub is_dynamic: bool,
    pub params: Params,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn failed(video_id: impl Into<String>, params: Params, error: String) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            video_id: video_id.into(),
            status: Status::Failed,
            error: Some(error),
            n_frames: 0,
            per_frame: Vec::new(),
            objects: Vec::new(),
            motion_strength: 0.0,
            is_dynamic: false,
            params,
            warnings: Vec::new(),
        }
    }

    /// Pretty JSON with a trailing newline; the exact bytes written to disk.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports contain only finite numbers");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Checks the cross-field invariants the schema cannot express.
    pub fn check_consistency(&self) -> Result<(), String> {
        if self.schema != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", self.schema));
        }
        let max = self.objects.iter().map(|o| o.strength).fold(0.0, f64::max);
        if max != self.motion_strength {
            return Err(format!(
                "motion_strength {} is not the maximum object strength {max}",
                self.motion_strength
            ));
        }
        if self.is_dynamic != (self.motion_strength >= self.params.threshold) {
            return Err("is_dynamic disagrees with motion_strength and threshold".into());
        }
        if (self.status == Status::Failed) != self.error.is_some() {
            return Err("error must be present exactly when status is failed".into());
        }
        Ok(())
    }
}

struct FrameData {
    name: String,
    pose: crate::geometry::Pose,
    aligned: Option<DepthMap>,
}

/// Runs the full pipeline for one video. Missing or malformed inputs are an
/// `Err`; a video whose frames mostly fail to align is an `Ok` report with
/// status `failed`.
pub fn annotate(job: &VideoJob) -> Result<Report, PipelineError> {
    let p = job.params;
    p.validate()?;
    let model = parse_colmap_text(&job.colmap_dir)?;
    if model.frames.is_empty() {
        return Err(PipelineError::Inconsistent(format!(
            "{}: no images in model",
            job.colmap_dir.display()
        )));
    }
    let intr: Intrinsics = *model.intrinsics_of(&model.frames[0]);
    for f in &model.frames {
        let k = model.intrinsics_of(f);
        if k != &intr {
            return Err(PipelineError::Inconsistent(format!(
                "image {} uses different intrinsics from {}",
                f.name, model.frames[0].name
            )));
        }
    }
    let cloud: Vec<_> = model.points.positions().collect();
    let tracks = read_tracks_jsonl(&job.tracks_path)?;

    let mut warnings = Vec::new();
    let mut frames = Vec::with_capacity(model.frames.len());
    let mut per_frame = Vec::new();
    let mut alignments = Vec::new();
    let mut mask_instances = std::collections::BTreeSet::new();
    let mut grid_keypoints: BTreeMap<u8, usize> = BTreeMap::new();
    for (idx, f) in model.frames.iter().enumerate() {
        let stem = f.stem();
        let depth_path = job.depth_dir.join(format!("{stem}.pfm"));
        let mask_path = job.mask_dir.join(format!("{stem}.pgm"));
        let rel = read_pfm(&depth_path, DepthKind::Relative)?;
        let mask = read_pgm_mask(&mask_path)?;
        for (path, w, h) in [
            (&depth_path, rel.width(), rel.height()),
            (&mask_path, mask.width(), mask.height()),
        ] {
            if (w, h) != (intr.width, intr.height) {
                return Err(PipelineError::Inconsistent(format!(
                    "{} is {w}x{h} but the camera is {}x{}",
                    path.display(),
                    intr.width,
                    intr.height
                )));
            }
        }
        for id in mask.instances() {
            mask_instances.insert(id);
            *grid_keypoints.entry(id).or_default() += sample_keypoints(&mask, id, p.grid_step).len();
        }
        let aligned = rasterize_sparse_depth(cloud.iter().copied(), f.pose(), &intr, idx)
            .map(|s| s.without_masked(&mask))
            .and_then(|s| align_depth(&rel, &s, p.min_sparse));
        let aligned = match aligned {
            Ok((a, map)) => {
                per_frame.push(FrameEntry {
                    frame: idx,
                    name: f.name.clone(),
                    alpha: a.alpha,
                    beta: a.beta,
                    n_sparse: a.n_samples,
                });
                alignments.push(FrameAlignment {
                    frame: idx,
                    alignment: a,
                });
                Some(map)
            }
            Err(e) => {
                warnings.push(format!("frame {idx} ({}): {e}", f.name));
                None
            }
        };
        frames.push(FrameData {
            name: f.name.clone(),
            pose: *f.pose(),
            aligned,
        });
    }

    let n_frames = frames.len();
    let unaligned = frames.iter().filter(|f| f.aligned.is_none()).count();
    if 2 * unaligned > n_frames {
        let mut r = Report::failed(
            &job.video_id,
            p,
            format!("{unaligned} of {n_frames} frames could not be aligned"),
        );
        r.n_frames = n_frames;
        r.per_frame = per_frame;
        r.warnings = warnings;
        return Ok(r);
    }

    for t in &tracks {
        if let Some(&last) = t.frames().last() {
            if last >= n_frames {
                warnings.push(format!(
                    "instance {} has observations in frame {last} but the model has {n_frames} frames",
                    t.instance_id()
                ));
            }
        }
    }
    for id in &mask_instances {
        if !tracks.iter().any(|t| t.instance_id() == *id as u32) {
            warnings.push(format!(
                "instance {id} appears in masks ({} grid keypoints at step {}) but has no tracks",
                grid_keypoints[id], p.grid_step
            ));
        }
    }

    let mut per_object = Vec::with_capacity(tracks.len());
    for t in &tracks {
        let mut fields = Vec::new();
        let mut skipped = SkipCounts::default();
        for i in 0..n_frames.saturating_sub(p.frame_gap) {
            let j = i + p.frame_gap;
            let Some(depth_i) = &frames[i].aligned else {
                skipped.bad_depth += t.in_frame(i).len();
                continue;
            };
            let field = motion_field(t, depth_i, &frames[i].pose, &frames[j].pose, &intr, i, j)
                .map_err(|e| PipelineError::Inconsistent(format!("frame {}: {e}", frames[i].name)))?;
            skipped.add(&field.skipped);
            fields.push(field);
        }
        per_object.push(ObjectStrength {
            instance: t.instance_id(),
            strength: object_strength(&fields),
            n_pairs: fields.iter().map(|f| f.pairs.len()).sum(),
            skipped,
        });
    }

    let motion = MotionReport::assemble(&job.video_id, per_object, alignments, p.threshold);
    Ok(Report {
        schema: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.into(),
        video_id: motion.video_id,
        status: Status::Ok,
        error: None,
        n_frames,
        per_frame,
        objects: motion
            .per_object
            .into_iter()
            .map(|o| ObjectEntry {
                instance: o.instance,
                strength: o.strength,
                n_pairs: o.n_pairs,
                skipped: o.skipped,
            })
            .collect(),
        motion_strength: motion.motion_strength,
        is_dynamic: motion.is_dynamic,
        params: p,
        warnings,
    })
}

/// [`annotate`] with job errors folded into a failed report.
pub fn annotate_or_fail(job: &VideoJob) -> Report {
    annotate(job).unwrap_or_else(|e| Report::failed(&job.video_id, job.params, e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    /// `(video_id, status)` sorted by id.
    pub results: Vec<(String, Status)>,
}

impl BatchSummary {
    pub fn n_failed(&self) -> usize {
        self.results.iter().filter(|(_, s)| *s == Status::Failed).count()
    }

    pub fn all_ok(&self) -> bool {
        self.n_failed() == 0
    }
}

pub fn report_path(out_dir: &Path, video_id: &str) -> PathBuf {
    out_dir.join(format!("{video_id}.json"))
}

/// Annotates every job on a pool of `workers` threads and writes
/// `<out_dir>/<video_id>.json` for each, failed or not.
pub fn run_batch(jobs: &[VideoJob], out_dir: &Path, workers: usize) -> Result<BatchSummary, PipelineError> {
    let mut ids: Vec<&str> = jobs.iter().map(|j| j.video_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(PipelineError::DuplicateVideo(w[0].to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| IngestError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let written: Vec<Result<(String, Status), PipelineError>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let report = annotate_or_fail(job);
                let path = report_path(out_dir, &job.video_id);
                std::fs::write(&path, report.to_json())
                    .map_err(|source| IngestError::Io { path, source })?;
                Ok((job.video_id.clone(), report.status))
            })
            .collect()
    });
    let mut results = written.into_iter().collect::<Result<Vec<_>, _>>()?;
    results.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(BatchSummary { results })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub accepted: Vec<String>,
    pub below_threshold: Vec<String>,
    /// `(file name, reason)` for malformed or failed reports.
    pub rejects: Vec<(String, String)>,
}

impl FilterOutcome {
    /// Accepted ids one per line, then rejects as `#` comment lines.
    pub fn to_list_file(&self) -> String {
        let mut out = String::new();
        for id in &self.accepted {
            out.push_str(id);
            out.push('\n');
        }
        if !self.rejects.is_empty() {
            out.push_str("# rejected\n");
            for (file, why) in &self.rejects {
                out.push_str(&format!("# {file}: {}\n", why.replace('\n', " ")));
            }
        }
        out
    }
}

/// Classifies every `*.json` report in `dir` against `threshold`.
pub fn filter_reports(dir: &Path, threshold: f64) -> Result<FilterOutcome, PipelineError> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(PipelineError::InvalidParams(format!("threshold {threshold}")));
    }
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    let mut out = FilterOutcome::default();
    for path in files {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let verdict = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| Report::from_json(&t).map_err(|e| e.to_string()))
            .and_then(|r| {
                r.check_consistency()?;
                match r.status {
                    Status::Ok => Ok(r),
                    Status::Failed => Err(format!(
                        "annotation failed: {}",
                        r.error.as_deref().unwrap_or("")
                    )),
                }
            });
        match verdict {
            Ok(r) if r.motion_strength >= threshold => out.accepted.push(r.video_id),
            Ok(r) => out.below_threshold.push(r.video_id),
            Err(why) => out.rejects.push((name, why)),
        }
    }
    out.accepted.sort();
    out.below_threshold.sort();
    Ok(out)
}
