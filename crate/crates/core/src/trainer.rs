//! The training loop: one camera per step, guided global and local views,
//! one Adam update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, record_frame, AdamConfig, AdamState, LossWeights, Upstream};
use crate::geometry::Sampling;
use crate::guidance::{
    augment_prompt, GuidanceError, GuidanceProvider, GuidanceRequest, NoisePolicy, ViewAngles, SEEDED_T_RANGE,
};
use crate::layout::Layout;
use crate::math::{mix_seed, Real};
use crate::render::{sample_camera, Camera, Phase, ViewTag};
use crate::scene::{SceneError, SceneModel};

const CAMERA_STREAM: u64 = 0xCA3E_8A;
const SAMPLE_STREAM: u64 = 0x5A3F_1E;
const NOISE_STREAM: u64 = 0x7015_E5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraSchedule {
    /// A fresh training camera per step.
    #[default]
    Random,
    /// Cycle through the given cameras.
    Fixed(Vec<Camera>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub resolution: u32,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// 0 disables snapshots.
    pub snapshot_every: u64,
    pub cameras: CameraSchedule,
    pub stratified: bool,
    pub freeze_calibrators: bool,
    /// Freeze every node field once the scene step reaches this value.
    pub node_freeze_after: Option<u64>,
    pub noise: NoisePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            resolution: 64,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            snapshot_every: 500,
            cameras: CameraSchedule::Random,
            stratified: true,
            freeze_calibrators: false,
            node_freeze_after: None,
            noise: NoisePolicy::ServiceDefault,
        }
    }
}

impl TrainConfig {
    /// Defaults for finetuning a recomposed scene.
    pub fn finetune() -> Self {
        Self { steps: crate::lifecycle::FINETUNE_STEPS, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.weights.validate()?;
        if self.resolution == 0 {
            return Err("resolution must be >= 1".into());
        }
        if !(self.adam.lr > 0.0) {
            return Err("learning rate must be > 0".into());
        }
        if matches!(&self.cameras, CameraSchedule::Fixed(c) if c.is_empty()) {
            return Err("fixed camera schedule is empty".into());
        }
        Ok(())
    }

    pub fn camera(&self, seed: u64, step: u64) -> Camera {
        match &self.cameras {
            CameraSchedule::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, CAMERA_STREAM, step]));
                sample_camera(&mut rng, Phase::Train, self.resolution, self.resolution)
            }
            CameraSchedule::Fixed(list) => list[(step % list.len() as u64) as usize].clone(),
        }
    }

    /// Noise policy sent with every request of `step`.
    pub fn noise_at(&self, seed: u64, step: u64) -> NoisePolicy {
        match self.noise {
            NoisePolicy::Seeded => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, NOISE_STREAM, step]));
                NoisePolicy::Fixed(rng.random_range(SEEDED_T_RANGE))
            }
            other => other,
        }
    }

    pub fn sampling(&self, seed: u64, step: u64) -> Sampling {
        if self.stratified {
            Sampling::Stratified { seed: mix_seed(&[seed, SAMPLE_STREAM, step]) }
        } else {
            Sampling::Midpoint
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("guidance failed at step {step}: {source}")]
    GuidanceFailure { step: u64, source: GuidanceError },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("hook failed: {0}")]
    Hook(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub step: u64,
    /// `½‖g‖²` of the global image gradient (the photometric loss under mock guidance).
    pub global: f64,
    /// Sum of `½‖g‖²` over local views.
    pub local: f64,
    pub sparsity: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub steps_run: u64,
    pub skipped_non_finite: u64,
    pub history: Vec<StepStats>,
}

pub trait TrainHooks<R> {
    fn on_step(&mut self, _stats: &StepStats) {}

    /// Called after the step counter reaches a snapshot multiple.
    fn on_snapshot(&mut self, _layout: &Layout, _scene: &SceneModel<R>) -> Result<(), String> {
        Ok(())
    }
}

pub struct NoHooks;

impl<R> TrainHooks<R> for NoHooks {}

fn half_sq(g: &[f32]) -> f64 {
    0.5 * g.iter().map(|v| (*v as f64).powi(2)).sum::<f64>()
}

/// Run `steps` iterations. On a guidance failure the scene holds the state
/// after the last completed step. Non-finite gradients skip the update.
pub fn train<R: Real>(
    layout: &Layout,
    scene: &mut SceneModel<R>,
    guidance: &mut dyn GuidanceProvider,
    steps: u64,
    hooks: &mut dyn TrainHooks<R>,
) -> Result<TrainReport, TrainError> {
    scene.check_layout(layout)?;
    let cfg = scene.train.clone();
    cfg.validate().map_err(TrainError::Config)?;
    let sizes: Vec<usize> = scene.tensors().iter().map(|t| t.len()).collect();
    if scene.optimizer.as_ref().is_none_or(|o| o.m.iter().map(Vec::len).ne(sizes.iter().copied())) {
        scene.optimizer = Some(AdamState::new(cfg.adam, &sizes));
    }
    let n_nodes = layout.boxes.len();
    let w = cfg.weights;
    let mut report = TrainReport::default();

    for _ in 0..steps {
        let step = scene.step;
        let camera = cfg.camera(scene.seed, step);
        let opts = scene.config.render_options(cfg.sampling(scene.seed, step));
        let (tape, views) = record_frame(scene, layout, &camera, &opts);
        let angles = ViewAngles { azimuth: camera.azimuth_deg, elevation: camera.elevation_deg };
        let noise = cfg.noise_at(scene.seed, step);
        let nodes_frozen = cfg.node_freeze_after.is_some_and(|s| step >= s);

        let mut ask = |tag: ViewTag, prompt: &str, img: &crate::autodiff::ViewImage<R>| {
            let name = match &tag {
                ViewTag::Global => "global".to_string(),
                ViewTag::Local(id) => format!("local-{id}"),
            };
            let request = GuidanceRequest {
                image: img.to_buffer(tag),
                prompt: augment_prompt(prompt, angles),
                view: angles,
                noise,
                request_id: format!("{:016x}-{step}-{name}", scene.seed),
                camera: Some(camera.clone()),
            };
            let resp = guidance.guide(&request).map_err(|source| TrainError::GuidanceFailure { step, source })?;
            if resp.grad.len() != request.image.pixels.len() {
                return Err(TrainError::GuidanceFailure {
                    step,
                    source: GuidanceError::ShapeMismatch { expected: request.image.pixels.len(), actual: resp.grad.len() },
                });
            }
            Ok(resp.grad)
        };

        let mut stats = StepStats { step, sparsity: views.sparsity().to_f64_lossy(), ..Default::default() };
        let global: Option<Vec<R>> = if w.alpha_g != 0.0 {
            let g = ask(ViewTag::Global, &layout.global_prompt, &views.global)?;
            stats.global = half_sq(&g);
            Some(g.iter().map(|v| R::of(*v as f64 * w.alpha_g)).collect())
        } else {
            None
        };
        let mut locals: Vec<Option<Vec<R>>> = vec![None; n_nodes];
        if w.alpha_l != 0.0 && !nodes_frozen {
            for (j, b) in layout.boxes.iter().enumerate() {
                let g = ask(ViewTag::Local(b.id.clone()), &b.prompt, &views.locals[j])?;
                stats.local += half_sq(&g);
                locals[j] = Some(g.iter().map(|v| R::of(*v as f64 * w.alpha_l)).collect());
            }
        }

        let inputs_finite = global.iter().chain(locals.iter().flatten()).flatten().all(|v| v.is_finite());
        let up = Upstream {
            global: global.as_deref(),
            locals: locals.iter().map(|l| l.as_deref()).collect(),
            sparsity: if nodes_frozen { R::zero() } else { R::of(w.beta) },
        };
        let grads = tape
            .backward(scene, &up)
            .map_err(|e| TrainError::Config(e.to_string()))?;

        if inputs_finite && grads.is_finite() {
            let mut frozen = vec![nodes_frozen; n_nodes];
            frozen.extend([cfg.freeze_calibrators; 2]);
            let mut state = scene.optimizer.take().expect("optimizer initialised above");
            let result = adam_step(&mut scene.tensors_mut(), &grads, &mut state, &frozen);
            scene.optimizer = Some(state);
            result.map_err(|e| TrainError::Config(e.to_string()))?;
        } else {
            stats.skipped = true;
            report.skipped_non_finite += 1;
        }
        scene.step += 1;
        report.steps_run += 1;
        hooks.on_step(&stats);
        report.history.push(stats);
        if cfg.snapshot_every > 0 && scene.step % cfg.snapshot_every == 0 {
            hooks.on_snapshot(layout, scene).map_err(TrainError::Hook)?;
        }
    }
    Ok(report)
}
