//! The trainable scene: one local field per layout box plus the shared
//! composition calibrators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::AdamState;
use crate::fields::{
    ColorSpace, CompositionCache, CompositionConfig, CompositionParams, LocalCache, LocalField, LocalFieldConfig,
};
use crate::geometry::{Sample, SampleConfig, Sampling, DEFAULT_FINAL_DELTA};
use crate::layout::Layout;
use crate::math::{mix_seed, Real};
use crate::render::{self, Camera, ImageBuffer, RadianceSource, RenderOptions, View};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub local: LocalFieldConfig,
    pub composition: CompositionConfig,
    /// Samples per box interval along each ray.
    pub n_per_box: usize,
    /// Spacing assigned to the last sample of a ray.
    pub final_delta: f64,
    pub background: Vec<f64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            local: LocalFieldConfig::default(),
            composition: CompositionConfig::default(),
            n_per_box: 32,
            final_delta: DEFAULT_FINAL_DELTA,
            background: vec![0.0; 4],
        }
    }
}

impl SceneConfig {
    pub fn color_space(&self) -> ColorSpace {
        self.local.color_space
    }

    pub fn channels(&self) -> usize {
        self.local.color_dim()
    }

    pub fn validate(&self) -> Result<(), String> {
        self.local.grid.validate()?;
        self.composition.validate()?;
        if self.composition.color_dim != self.channels() {
            return Err(format!(
                "calibrator color_dim {} differs from local color channels {}",
                self.composition.color_dim,
                self.channels()
            ));
        }
        if self.background.len() != self.channels() {
            return Err(format!("background needs {} channels", self.channels()));
        }
        if self.n_per_box == 0 {
            return Err("n_per_box must be >= 1".into());
        }
        if !(self.final_delta >= 0.0) {
            return Err("final_delta must be >= 0".into());
        }
        Ok(())
    }

    pub fn render_options(&self, sampling: Sampling) -> RenderOptions {
        RenderOptions {
            samples: SampleConfig { n_per_box: self.n_per_box, sampling, final_delta: self.final_delta },
            background: self.background.clone(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("scene nodes {nodes:?} do not match layout boxes {boxes:?}")]
    LayoutMismatch { nodes: Vec<String>, boxes: Vec<String> },
    #[error("invalid scene config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel<R> {
    pub config: SceneConfig,
    pub train: TrainConfig,
    /// Node ids, in layout order.
    pub node_ids: Vec<String>,
    pub nodes: Vec<LocalField<R>>,
    pub composition: CompositionParams<R>,
    pub seed: u64,
    pub step: u64,
    /// Adam moments; created on the first training step.
    pub optimizer: Option<AdamState<R>>,
}

/// Per-node RNG stream: depends on the run seed and the node id only.
pub fn node_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    mix_seed(&[seed, u64::from_le_bytes(digest[..8].try_into().unwrap())])
}

pub fn composition_seed(seed: u64, generation: u64) -> u64 {
    mix_seed(&[seed, 0xC0_4D_05E, generation])
}

impl<R: Real> SceneModel<R> {
    pub fn new(layout: &Layout, config: SceneConfig, train: TrainConfig) -> Result<Self, SceneError> {
        config.validate().map_err(SceneError::Config)?;
        let seed = layout.seed;
        let nodes = layout
            .boxes
            .iter()
            .map(|b| LocalField::new(config.local.clone(), &mut ChaCha8Rng::seed_from_u64(node_seed(seed, &b.id))))
            .collect();
        let composition = CompositionParams::new(
            config.composition.clone(),
            &mut ChaCha8Rng::seed_from_u64(composition_seed(seed, 0)),
        );
        Ok(Self {
            node_ids: layout.boxes.iter().map(|b| b.id.clone()).collect(),
            nodes,
            composition,
            config,
            train,
            seed,
            step: 0,
            optimizer: None,
        })
    }

    pub fn check_layout(&self, layout: &Layout) -> Result<(), SceneError> {
        if self.node_ids.len() == layout.boxes.len() && self.node_ids.iter().zip(&layout.boxes).all(|(a, b)| *a == b.id) {
            Ok(())
        } else {
            Err(SceneError::LayoutMismatch {
                nodes: self.node_ids.clone(),
                boxes: layout.boxes.iter().map(|b| b.id.clone()).collect(),
            })
        }
    }

    pub fn channels(&self) -> usize {
        self.config.channels()
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.params.len()).sum::<usize>()
            + self.composition.density.len()
            + self.composition.color.len()
    }

    pub fn render(&self, layout: &Layout, camera: &Camera, view: View) -> Result<ImageBuffer, SceneError> {
        self.check_layout(layout)?;
        Ok(render::render_image(self, layout, camera, view, &self.config.render_options(Sampling::Midpoint)))
    }
}

#[derive(Default)]
pub struct SceneScratch<R> {
    pub(crate) local: LocalCache<R>,
    pub(crate) comp: CompositionCache<R>,
}

impl<R: Real> RadianceSource<R> for SceneModel<R> {
    type Scratch = SceneScratch<R>;

    fn color_dim(&self) -> usize {
        self.channels()
    }

    fn eval_local(&self, s: &Sample, scratch: &mut SceneScratch<R>, color: &mut [R]) -> R {
        self.nodes[s.node].forward(s.x_l, &mut scratch.local, color)
    }

    fn eval_global(&self, s: &Sample, scratch: &mut SceneScratch<R>, local: &mut [R], global: &mut [R]) -> (R, R) {
        let sigma_l = self.nodes[s.node].forward(s.x_l, &mut scratch.local, local);
        let sigma_g = self.composition.forward(s.x_g, s.d_g, sigma_l, local, &mut scratch.comp, global);
        (sigma_l, sigma_g)
    }
}
