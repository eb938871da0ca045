//! Binary checkpoint and node-cache files.
//!
//! ```text
//! magic      16 bytes  "CNRFCKPT" / "CNRFNODE", zero padded
//! version    u32 LE
//! header_len u64 LE
//! header     UTF-8 JSON: section index, metadata, payload sha256
//! payload    little-endian f32 blobs, one per named section
//! ```
//! Loading checks magic, version, length and digest before building
//! anything, so a damaged file never yields a partial scene.

use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::AdamState;
use crate::fields::{CompositionParams, LocalField};
use crate::layout::Layout;
use crate::render::image::write_atomic;
use crate::scene::{SceneConfig, SceneModel};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CNRFCKPT";
pub const NODE_MAGIC: &[u8; 8] = b"CNRFNODE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionEntry {
    pub name: String,
    /// Byte offset into the payload.
    pub offset: u64,
    /// Number of f32 values.
    pub len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header<M> {
    sections: Vec<SectionEntry>,
    payload_sha256: String,
    meta: M,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Encode named f32 sections plus metadata.
pub fn encode_container<M: Serialize>(magic: &[u8; 8], version: u32, meta: &M, sections: &[(String, &[f32])]) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut index = Vec::with_capacity(sections.len());
    for (name, data) in sections {
        index.push(SectionEntry { name: name.clone(), offset: payload.len() as u64, len: data.len() as u64 });
        payload.extend(data.iter().flat_map(|v| v.to_le_bytes()));
    }
    let header = Header { sections: index, payload_sha256: hex(&Sha256::digest(&payload)), meta };
    let header = serde_json::to_vec(&header).expect("metadata serialises");
    let mut out = Vec::with_capacity(28 + header.len() + payload.len());
    let mut m = [0u8; 16];
    m[..8].copy_from_slice(magic);
    out.extend_from_slice(&m);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub struct Container<M> {
    pub version: u32,
    pub meta: M,
    pub sections: Vec<(String, Vec<f32>)>,
}

impl<M> Container<M> {
    pub fn take(&mut self, name: &str) -> Result<Vec<f32>, CheckpointError> {
        let i = self
            .sections
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing section `{name}`")))?;
        Ok(std::mem::take(&mut self.sections[i].1))
    }
}

fn eof(what: &str) -> CheckpointError {
    CheckpointError::Io(io::Error::new(io::ErrorKind::UnexpectedEof, format!("truncated {what}")))
}

pub fn decode_container<M: DeserializeOwned>(magic: &[u8; 8], version: u32, bytes: &[u8]) -> Result<Container<M>, CheckpointError> {
    if bytes.len() < 28 {
        return Err(eof("preamble"));
    }
    if &bytes[..8] != magic || bytes[8..16].iter().any(|b| *b != 0) {
        return Err(CheckpointError::VersionMismatch(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if found != version {
        return Err(CheckpointError::VersionMismatch(format!("format version {found}, expected {version}")));
    }
    let hl = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let header_end = 28usize.checked_add(hl).ok_or_else(|| CheckpointError::Corrupt("header length".into()))?;
    if bytes.len() < header_end {
        return Err(eof("header"));
    }
    let header: Header<M> =
        serde_json::from_slice(&bytes[28..header_end]).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let payload = &bytes[header_end..];
    let needed = header.sections.iter().map(|s| s.offset + 4 * s.len).max().unwrap_or(0) as usize;
    if payload.len() < needed {
        return Err(eof("payload"));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(CheckpointError::Corrupt("payload digest mismatch".into()));
    }
    let sections = header
        .sections
        .iter()
        .map(|s| {
            let raw = &payload[s.offset as usize..(s.offset + 4 * s.len) as usize];
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            (s.name.clone(), data)
        })
        .collect();
    Ok(Container { version: found, meta: header.meta, sections })
}

/// Header index of a checkpoint file, without reading parameters.
pub fn read_index(path: &Path) -> Result<Vec<SectionEntry>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    let c: Container<serde_json::Value> = decode_container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &bytes)?;
    let mut offset = 0;
    Ok(c.sections
        .iter()
        .map(|(name, data)| {
            let e = SectionEntry { name: name.clone(), offset, len: data.len() as u64 };
            offset += 4 * data.len() as u64;
            e
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneMeta {
    layout: Layout,
    config: SceneConfig,
    train: TrainConfig,
    node_ids: Vec<String>,
    node_configs: Vec<crate::fields::LocalFieldConfig>,
    seed: u64,
    step: u64,
    adam_step: Option<u64>,
}

pub fn encode_checkpoint(scene: &SceneModel<f32>, layout: &Layout) -> Vec<u8> {
    let registry = scene.registry();
    let tensors = scene.tensors();
    let mut sections: Vec<(String, &[f32])> = registry.names.iter().cloned().zip(tensors.iter().copied()).collect();
    if let Some(opt) = &scene.optimizer {
        for (name, m) in registry.names.iter().zip(&opt.m) {
            sections.push((format!("adam/m/{name}"), m));
        }
        for (name, v) in registry.names.iter().zip(&opt.v) {
            sections.push((format!("adam/v/{name}"), v));
        }
    }
    let meta = SceneMeta {
        layout: layout.clone(),
        config: scene.config.clone(),
        train: scene.train.clone(),
        node_ids: scene.node_ids.clone(),
        node_configs: scene.nodes.iter().map(|n| n.cfg.clone()).collect(),
        seed: scene.seed,
        step: scene.step,
        adam_step: scene.optimizer.as_ref().map(|o| o.step),
    };
    encode_container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &meta, &sections)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(SceneModel<f32>, Layout), CheckpointError> {
    let mut c: Container<SceneMeta> = decode_container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes)?;
    let corrupt = CheckpointError::Corrupt;
    if c.meta.node_ids.len() != c.meta.node_configs.len() {
        return Err(corrupt("node index and configs differ in length".into()));
    }
    let mut nodes = Vec::new();
    let (ids, cfgs) = (c.meta.node_ids.clone(), c.meta.node_configs.clone());
    for (id, cfg) in ids.iter().zip(&cfgs) {
        let params = c.take(&format!("node/{id}"))?;
        nodes.push(LocalField::from_params(cfg.clone(), params).map_err(corrupt)?);
    }
    let density = c.take("composition/density")?;
    let color = c.take("composition/color")?;
    let composition =
        CompositionParams::from_params(c.meta.config.composition.clone(), density, color).map_err(corrupt)?;
    let mut scene = SceneModel {
        config: c.meta.config.clone(),
        train: c.meta.train.clone(),
        node_ids: c.meta.node_ids.clone(),
        nodes,
        composition,
        seed: c.meta.seed,
        step: c.meta.step,
        optimizer: None,
    };
    if let Some(step) = c.meta.adam_step {
        let names = scene.registry().names;
        let mut state = AdamState::new(scene.train.adam, &scene.registry().sizes);
        state.step = step;
        for (i, name) in names.iter().enumerate() {
            state.m[i] = c.take(&format!("adam/m/{name}"))?;
            state.v[i] = c.take(&format!("adam/v/{name}"))?;
        }
        let sizes = scene.registry().sizes;
        if state.m.iter().chain(&state.v).zip(sizes.iter().chain(&sizes)).any(|(t, n)| t.len() != *n) {
            return Err(corrupt("optimizer moments do not match parameters".into()));
        }
        scene.optimizer = Some(state);
    }
    scene.check_layout(&c.meta.layout).map_err(|e| corrupt(e.to_string()))?;
    Ok((scene, c.meta.layout))
}

/// Atomic write: readers see the old file or the complete new one.
pub fn save_checkpoint(scene: &SceneModel<f32>, layout: &Layout, path: &Path) -> Result<(), CheckpointError> {
    Ok(write_atomic(path, &encode_checkpoint(scene, layout))?)
}

/// The scene and the layout it was saved with.
pub fn load_checkpoint(path: &Path) -> Result<(SceneModel<f32>, Layout), CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}
