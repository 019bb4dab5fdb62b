use std::path::Path;

use motion_curate::pipeline::{annotate, filter_reports, run_batch, Params, Report, VideoJob};
use motion_curate::synth::{analytic_strength, generate_scene, CameraPath, ObjectConfig, SceneConfig};

fn two_objects(seed: u64, noise: f64) -> SceneConfig {
    let mut c = SceneConfig::zoom_preset(seed, [0.0; 3]);
    c.objects[0].min = [-1.6, -0.5, 5.5];
    c.objects[0].max = [-0.6, 0.5, 6.5];
    c.objects.push(ObjectConfig {
        instance_id: 2,
        count: 300,
        min: [0.6, -0.5, 5.5],
        max: [1.6, 0.5, 6.5],
        velocity: [0.0, 0.15, 0.0],
        rotation_rate: 0.0,
    });
    c.depth_corruption.noise = noise;
    c
}

fn run(config: &SceneConfig, root: &Path, name: &str) -> Report {
    let dir = root.join(name);
    generate_scene(config).unwrap().write(&dir).unwrap();
    annotate(&VideoJob::from_dir(&dir, Params::default())).unwrap()
}

#[test]
fn video_strength_is_the_moving_object() {
    let root = tempfile::tempdir().unwrap();
    let config = two_objects(11, 0.0);
    let r = run(&config, root.path(), "pair");
    let want = analytic_strength(&config);
    assert!(r.objects[0].strength < 1e-6);
    assert!((r.objects[1].strength - want[1].1).abs() < 1e-6);
    assert_eq!(r.motion_strength, r.objects[1].strength);
    assert!(r.is_dynamic);
}

#[test]
fn static_object_stays_small_under_depth_noise() {
    let root = tempfile::tempdir().unwrap();
    for (k, noise) in [0.01, 0.03, 0.05].into_iter().enumerate() {
        let r = run(&two_objects(20 + k as u64, noise), root.path(), &format!("n{k}"));
        let (still, moving) = (r.objects[0].strength, r.objects[1].strength);
        assert!(
            still < 0.1 * moving,
            "noise {noise}: static {still} vs moving {moving}"
        );
    }
}

#[test]
fn identity_camera_translation_matches_closed_form() {
    let root = tempfile::tempdir().unwrap();
    let mut c = SceneConfig::zoom_preset(12, [0.1, 0.0, 0.0]);
    c.camera_path = CameraPath::Linear {
        start: [0.0; 3],
        velocity: [0.0; 3],
    };
    // a flat object facing the camera moves by f * dx / z pixels at every point
    c.objects[0].min = [-0.6, -0.6, 6.0];
    c.objects[0].max = [0.6, 0.6, 6.0];
    let r = run(&c, root.path(), "flat");
    let expected = c.intr.fx * 0.1 / 6.0 / c.intr.width as f64;
    assert!((r.objects[0].strength - expected).abs() < 1e-6);
    assert!((analytic_strength(&c)[0].1 - expected).abs() < 1e-12);
}

#[test]
fn filter_matches_brute_force_rescan() {
    let root = tempfile::tempdir().unwrap();
    let videos = root.path().join("videos");
    let jobs: Vec<_> = (0..100)
        .map(|seed| {
            let dir = videos.join(format!("s{seed:03}"));
            let mut c = SceneConfig::random(3000 + seed);
            c.frames = 3;
            generate_scene(&c).unwrap().write(&dir).unwrap();
            VideoJob::from_dir(&dir, Params::default())
        })
        .collect();
    let out = root.path().join("reports");
    assert!(run_batch(&jobs, &out, 4).unwrap().all_ok());
    for threshold in [0.0, 0.002, 0.01, 0.05] {
        let got = filter_reports(&out, threshold).unwrap();
        let mut want = Vec::new();
        for entry in std::fs::read_dir(&out).unwrap() {
            let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            if v["motion_strength"].as_f64().unwrap() >= threshold {
                want.push(v["video_id"].as_str().unwrap().to_string());
            }
        }
        want.sort();
        assert_eq!(got.accepted, want, "threshold {threshold}");
        assert_eq!(got.accepted.len() + got.below_threshold.len(), 100);
        assert!(got.rejects.is_empty());
    }
}
