//! Shared fixtures for the criterion benchmarks.

use motion_curate::synth::{generate_scene, SceneBundle, SceneConfig};

/// The zooming-camera scene with a sliding object, as used by the CLI preset.
pub fn zoom_scene() -> (SceneConfig, SceneBundle) {
    let config = SceneConfig::zoom_preset(7, [0.2, 0.0, 0.0]);
    let bundle = generate_scene(&config).expect("preset scene generates");
    (config, bundle)
}
