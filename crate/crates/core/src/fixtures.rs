//! The desk-scale two-sphere scene used by tests, examples and the CLI
//! smoke runs: two overlapping boxes, one constant-density sphere in each,
//! kept clear of the overlap.

use crate::analytic::{AnalyticScene, AnalyticSphere};
use crate::autodiff::{AdamConfig, LossWeights};
use crate::fields::{ColorSpace, CompositionConfig, CompositionMode, HashGridConfig, LocalFieldConfig};
use crate::layout::{Box3, Layout};
use crate::math::Vec3;
use crate::render::{orbit_cameras, Camera};
use crate::scene::SceneConfig;
use crate::trainer::{CameraSchedule, TrainConfig};

pub const SPHERE_DENSITY: f64 = 3.0;
pub const ORBIT_RADIUS: f64 = 1.25;
pub const ORBIT_ELEVATION: f64 = 20.0;

pub fn two_sphere_layout() -> Layout {
    Layout {
        global_prompt: "a red ball and a blue ball".into(),
        seed: 7,
        boxes: vec![
            Box3::new("red", Vec3::new(-0.25, 0.0, 0.0), Vec3::splat(0.35), "a red ball"),
            Box3::new("blue", Vec3::new(0.25, 0.0, 0.0), Vec3::splat(0.35), "a blue ball"),
        ],
    }
}

pub fn two_sphere_target() -> AnalyticScene {
    AnalyticScene {
        spheres: vec![
            AnalyticSphere {
                node: "red".into(),
                center: Vec3::new(-0.3, 0.0, 0.0),
                radius: 0.18,
                density: SPHERE_DENSITY,
                color: vec![0.9, 0.15, 0.1],
            },
            AnalyticSphere {
                node: "blue".into(),
                center: Vec3::new(0.3, 0.0, 0.0),
                radius: 0.18,
                density: SPHERE_DENSITY,
                color: vec![0.1, 0.25, 0.9],
            },
        ],
    }
}

/// Small RGB scene sized for a single CPU core.
pub fn surrogate_scene_config(mode: CompositionMode) -> SceneConfig {
    SceneConfig {
        local: LocalFieldConfig {
            grid: HashGridConfig { levels: 8, features: 2, coarsest: 4, finest: 64, log2_table_size: 14 },
            hidden: 32,
            hidden_layers: 1,
            color_space: ColorSpace::Rgb,
            ..LocalFieldConfig::default()
        },
        composition: CompositionConfig {
            mode,
            width: 8,
            grid: HashGridConfig { levels: 4, features: 2, coarsest: 4, finest: 32, log2_table_size: 12 },
            color_dim: 3,
            ..CompositionConfig::default()
        },
        n_per_box: 16,
        // no open-ended last interval: empty box exits stay transparent
        final_delta: 0.0,
        background: vec![0.0; 3],
    }
}

pub fn surrogate_train_config(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        weights: LossWeights::default(),
        adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
        cameras: CameraSchedule::Random,
        snapshot_every: 0,
        ..TrainConfig::default()
    }
}

pub fn orbit(n: usize, resolution: u32) -> Vec<Camera> {
    orbit_cameras(n, ORBIT_RADIUS, ORBIT_ELEVATION, resolution, resolution)
}
