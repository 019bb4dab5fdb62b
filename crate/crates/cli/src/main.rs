use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use motion_curate::geometry::{plucker_map, Intrinsics, Point3};
use motion_curate::ingest::{parse_colmap_text, serialize_colmap_text, write_plucker, PluckerTensor, SfmModel};
use motion_curate::pipeline::{filter_reports, run_batch, Params, VideoJob};
use motion_curate::synth::{generate_scene, SceneConfig};
use motion_curate::{densify_trajectory, orbit_trajectory, Pose};

const EXIT_FATAL: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "motion-curate", version, about = "Annotate and curate videos by camera and object motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align depth, measure object motion and write one JSON report per video.
    Annotate {
        /// Video directories (colmap/, depth/, masks/, tracks.jsonl).
        videos: Vec<PathBuf>,
        /// Treat every subdirectory of this directory as a video.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        frame_gap: usize,
        #[arg(long, default_value_t = 50)]
        min_sparse: usize,
        #[arg(long, default_value_t = 0.002)]
        threshold: f64,
        #[arg(long, default_value_t = 8)]
        grid_step: usize,
        /// Worker threads; defaults to the number of logical CPUs.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory for `<video_id>.json` reports.
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep videos whose motion strength reaches the threshold.
    Filter {
        reports: PathBuf,
        #[arg(long, default_value_t = 0.002)]
        threshold: f64,
        /// List file: accepted ids, then rejected reports as `#` lines.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-frame Plücker ray maps of a COLMAP model as a PLK1 tensor.
    Plucker {
        colmap: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit an orbit trajectory as COLMAP text.
    Orbit {
        #[arg(long)]
        radius: f64,
        /// Radians.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        elevation: f64,
        #[arg(long)]
        n: usize,
        /// Orbit centre as `x,y,z`.
        #[arg(long, value_delimiter = ',', default_value = "0,0,0", allow_hyphen_values = true)]
        center: Vec<f64>,
        #[arg(long, default_value_t = 256.0)]
        focal: f64,
        #[arg(long, default_value_t = 256)]
        width: u32,
        #[arg(long, default_value_t = 256)]
        height: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate between the poses of a COLMAP model, used as anchors.
    Densify {
        colmap: PathBuf,
        #[arg(long)]
        per_segment: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scene with exact ground truth.
    Synth {
        /// Scene description as JSON.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Zooming camera, motionless object.
    ZoomStatic,
    /// Zooming camera, object sliding sideways about 3 px per frame.
    ZoomMoving,
    /// Randomized camera path and objects.
    Random,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_FATAL)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Annotate {
            videos,
            dataset,
            frame_gap,
            min_sparse,
            threshold,
            grid_step,
            workers,
            out,
        } => {
            let params = Params {
                frame_gap,
                min_sparse,
                threshold,
                grid_step,
            };
            params.validate()?;
            let mut dirs = videos;
            if let Some(root) = dataset {
                dirs.extend(subdirectories(&root)?);
            }
            if dirs.is_empty() {
                bail!("no videos given (pass directories or --dataset)");
            }
            let jobs: Vec<_> = dirs.iter().map(|d| VideoJob::from_dir(d, params)).collect();
            let workers = workers.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
            if workers == 0 {
                bail!("--workers must be at least 1");
            }
            let summary = run_batch(&jobs, &out, workers)?;
            for (id, status) in &summary.results {
                eprintln!("{id}: {status:?}");
            }
            eprintln!(
                "{} videos, {} failed; reports in {}",
                summary.results.len(),
                summary.n_failed(),
                out.display()
            );
            Ok(if summary.all_ok() { 0 } else { EXIT_PARTIAL })
        }
        Command::Filter {
            reports,
            threshold,
            out,
        } => {
            let outcome = filter_reports(&reports, threshold)?;
            write_file(&out, outcome.to_list_file().as_bytes())?;
            println!(
                "accepted {}, below threshold {}, rejected {}",
                outcome.accepted.len(),
                outcome.below_threshold.len(),
                outcome.rejects.len()
            );
            for (file, why) in &outcome.rejects {
                eprintln!("rejected {file}: {why}");
            }
            Ok(if outcome.rejects.is_empty() { 0 } else { EXIT_PARTIAL })
        }
        Command::Plucker { colmap, out } => {
            let model = parse_colmap_text(&colmap)?;
            let Some(first) = model.frames.first() else {
                bail!("{}: model has no images", colmap.display());
            };
            let size = |f| {
                let k: &Intrinsics = model.intrinsics_of(f);
                (k.width, k.height)
            };
            let want = size(first);
            if let Some(f) = model.frames.iter().find(|f| size(f) != want) {
                bail!(
                    "mixed resolutions: {} is {:?}, {} is {:?}",
                    first.name,
                    want,
                    f.name,
                    size(f)
                );
            }
            let maps: Vec<_> = model
                .frames
                .iter()
                .map(|f| plucker_map(f.pose(), model.intrinsics_of(f)))
                .collect();
            let names: Vec<_> = model.frames.iter().map(|f| f.name.clone()).collect();
            write_plucker(&PluckerTensor::from_maps(&maps)?, &names, &out)?;
            eprintln!("wrote {} frames at {}x{} to {}", maps.len(), want.0, want.1, out.display());
            Ok(0)
        }
        Command::Orbit {
            radius,
            elevation,
            n,
            center,
            focal,
            width,
            height,
            out,
        } => {
            let intr = Intrinsics::centered(focal, width, height)?;
            if center.len() != 3 {
                bail!("--center needs exactly three comma-separated values");
            }
            let c = Point3::new(center[0], center[1], center[2]);
            let traj = orbit_trajectory(&c, radius, elevation, n, intr)?;
            serialize_colmap_text(&SfmModel::from_trajectory(&traj), &out)?;
            Ok(0)
        }
        Command::Densify {
            colmap,
            per_segment,
            out,
        } => {
            let model = parse_colmap_text(&colmap)?;
            let Some(first) = model.frames.first() else {
                bail!("{}: model has no images", colmap.display());
            };
            let intr = *model.intrinsics_of(first);
            if model.frames.iter().any(|f| model.intrinsics_of(f) != &intr) {
                bail!("anchors must share one camera");
            }
            let anchors: Vec<Pose> = model.frames.iter().map(|f| *f.pose()).collect();
            let traj = densify_trajectory(&anchors, per_segment, intr)?;
            let mut dense = SfmModel::from_trajectory(&traj);
            dense.points = model.points.clone();
            serialize_colmap_text(&dense, &out)?;
            Ok(0)
        }
        Command::Synth {
            config,
            preset,
            seed,
            out,
        } => {
            let config = match (config, preset) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<SceneConfig>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                (None, Some(Preset::ZoomStatic)) => SceneConfig::zoom_preset(seed, [0.0; 3]),
                (None, Some(Preset::ZoomMoving)) => SceneConfig::zoom_preset(seed, [0.2, 0.0, 0.0]),
                (None, Some(Preset::Random)) => SceneConfig::random(seed),
                (None, None) => bail!("pass --config or --preset"),
            };
            generate_scene(&config)?.write(&out)?;
            Ok(0)
        }
    }
}

fn subdirectories(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
