//! Compositional neural radiance fields.
//!
//! A scene is an editable [`layout::Layout`] of axis-aligned boxes, each
//! with its own object prompt and its own local field. Rays are sampled per
//! box, merged by depth, passed through the composition calibrators and
//! volume-rendered into one global view (plus one local view per box).
//! Training consumes image-space gradients from a pluggable guidance
//! provider.

pub mod analytic;
pub mod checkpoint;
pub mod autodiff;
pub mod fields;
pub mod fixtures;
pub mod geometry;
pub mod guidance;
pub mod layout;
pub mod lifecycle;
pub mod math;
pub mod render;
pub mod scene;
pub mod trainer;
