//! Decompose a trained scene into per-node caches and recompose cached
//! nodes into new layouts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checkpoint::{decode_container, encode_container, CheckpointError, NODE_MAGIC};
use crate::fields::{CompositionParams, LocalField, LocalFieldConfig};
use crate::layout::Layout;
use crate::render::image::write_atomic;
use crate::scene::{composition_seed, node_seed, SceneConfig, SceneError, SceneModel};
use crate::trainer::TrainConfig;

pub const NODE_CACHE_VERSION: u32 = 1;
/// Default finetuning length after recomposition.
pub const FINETUNE_STEPS: u64 = 1000;
pub const NODE_CACHE_EXT: &str = "cnode";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_scene: String,
    pub node_id: String,
    /// Object prompt at save time.
    pub prompt: String,
    pub steps: u64,
    pub format_version: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NodeMeta {
    config: LocalFieldConfig,
    provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeCache {
    pub field: LocalField<f32>,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum LifecycleError {
    #[error("box `{id}` refers to missing cache {path}")]
    MissingCache { id: String, path: PathBuf },
    #[error("cache {path} has format version {found}, expected {expected}")]
    CacheVersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("cache {path}: {reason}")]
    Incompatible { path: PathBuf, reason: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Stable id of the scene a node came from.
pub fn scene_id(layout: &Layout) -> String {
    let digest = Sha256::digest(format!("{}\u{0}{}", layout.global_prompt, layout.seed).as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl NodeCache {
    pub fn encode(&self) -> Vec<u8> {
        let meta = NodeMeta { config: self.field.cfg.clone(), provenance: self.provenance.clone() };
        encode_container(NODE_MAGIC, NODE_CACHE_VERSION, &meta, &[("field".into(), &self.field.params)])
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, LifecycleError> {
        if bytes.len() >= 20 && &bytes[..8] == NODE_MAGIC {
            let found = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
            if found != NODE_CACHE_VERSION {
                return Err(LifecycleError::CacheVersionMismatch {
                    path: path.to_path_buf(),
                    found,
                    expected: NODE_CACHE_VERSION,
                });
            }
        }
        let mut c = decode_container::<NodeMeta>(NODE_MAGIC, NODE_CACHE_VERSION, bytes)?;
        let params = c.take("field")?;
        let field = LocalField::from_params(c.meta.config.clone(), params)
            .map_err(|reason| LifecycleError::Incompatible { path: path.to_path_buf(), reason })?;
        Ok(Self { field, provenance: c.meta.provenance })
    }

    pub fn save(&self, path: &Path) -> Result<(), LifecycleError> {
        Ok(write_atomic(path, &self.encode())?)
    }

    pub fn load(path: &Path) -> Result<Self, LifecycleError> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                LifecycleError::MissingCache { id: String::new(), path: path.to_path_buf() }
            }
            _ => LifecycleError::Io(e),
        })?;
        Self::decode(&bytes, path)
    }
}

/// One cache per node; returns id → cache path.
pub fn decompose(scene: &SceneModel<f32>, layout: &Layout, dir: &Path) -> Result<BTreeMap<String, PathBuf>, LifecycleError> {
    decompose_nodes(scene, layout, dir, None)
}

/// Like [`decompose`], restricted to `only` when given. Unknown ids fail
/// before anything is written.
pub fn decompose_nodes(
    scene: &SceneModel<f32>,
    layout: &Layout,
    dir: &Path,
    only: Option<&[String]>,
) -> Result<BTreeMap<String, PathBuf>, LifecycleError> {
    scene.check_layout(layout)?;
    if let Some(id) = only.into_iter().flatten().find(|id| layout.find(id).is_none()) {
        return Err(LifecycleError::Scene(SceneError::LayoutMismatch {
            nodes: vec![id.clone()],
            boxes: layout.boxes.iter().map(|b| b.id.clone()).collect(),
        }));
    }
    std::fs::create_dir_all(dir)?;
    let source = scene_id(layout);
    let mut out = BTreeMap::new();
    for (field, b) in scene.nodes.iter().zip(&layout.boxes) {
        if only.is_some_and(|ids| !ids.contains(&b.id)) {
            continue;
        }
        let cache = NodeCache {
            field: field.clone(),
            provenance: Provenance {
                source_scene: source.clone(),
                node_id: b.id.clone(),
                prompt: b.prompt.clone(),
                steps: scene.step,
                format_version: NODE_CACHE_VERSION,
            },
        };
        let path = dir.join(format!("{}.{NODE_CACHE_EXT}", b.id));
        cache.save(&path)?;
        out.insert(b.id.clone(), path);
    }
    Ok(out)
}

/// Build a scene for `layout`: boxes with a `cache_ref` load their field
/// (relative refs resolve against `base_dir`), the others start fresh.
/// Calibrators are always new; pass [`TrainConfig::finetune`] for the
/// usual short finetune.
pub fn recompose(
    layout: &Layout,
    config: SceneConfig,
    train: TrainConfig,
    base_dir: &Path,
) -> Result<SceneModel<f32>, LifecycleError> {
    let mut scene = SceneModel::<f32>::new(layout, config, TrainConfig::default())?;
    for (i, b) in layout.boxes.iter().enumerate() {
        let Some(r) = &b.cache_ref else { continue };
        let path = if r.is_absolute() { r.clone() } else { base_dir.join(r) };
        let cache = NodeCache::load(&path).map_err(|e| match e {
            LifecycleError::MissingCache { path, .. } => LifecycleError::MissingCache { id: b.id.clone(), path },
            other => other,
        })?;
        if cache.field.color_dim() != scene.channels() {
            return Err(LifecycleError::Incompatible {
                path,
                reason: format!("cache has {} color channels, scene has {}", cache.field.color_dim(), scene.channels()),
            });
        }
        scene.nodes[i] = cache.field;
    }
    // a distinct stream from the original scene's calibrators
    scene.composition = CompositionParams::new(
        scene.config.composition.clone(),
        &mut ChaCha8Rng::seed_from_u64(composition_seed(layout.seed, 1)),
    );
    scene.train = train;
    Ok(scene)
}

/// Fresh field for a node, as a new scene would create it.
pub fn fresh_node(layout: &Layout, id: &str, cfg: LocalFieldConfig) -> LocalField<f32> {
    LocalField::new(cfg, &mut ChaCha8Rng::seed_from_u64(node_seed(layout.seed, id)))
}
