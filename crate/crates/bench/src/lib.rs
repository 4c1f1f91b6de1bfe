//! Shared fixtures for the benchmarks.

use mvc_core::{make_scene, FrameBundle, Scene, SceneConfig};

/// The default three-camera scene, shortened to `frames` frames.
pub fn scene(frames: usize) -> Scene {
    make_scene(SceneConfig {
        frames,
        ..SceneConfig::default()
    })
    .expect("default scene builds")
}

pub fn first_frame(scene: &Scene) -> FrameBundle {
    scene.frame(0).expect("frame renders")
}
