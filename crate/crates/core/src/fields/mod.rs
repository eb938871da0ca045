//! Trainable fields: per-object local fields and the composition calibrators.

pub mod composition;
pub mod encoding;
pub mod hashgrid;
pub mod local;
pub mod mlp;

pub use composition::{CompositionCache, CompositionConfig, CompositionGrads, CompositionMode, CompositionParams, WrongMode};
pub use hashgrid::HashGridConfig;
pub use local::{eval_local, ColorSpace, LocalCache, LocalField, LocalFieldConfig};
pub use mlp::{Mlp, MlpCache};
