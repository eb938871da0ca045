//! Reverse-mode differentiation of the renderer, loss terms, and Adam.

pub mod adam;
pub mod loss;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{assemble_total_gradient, binary_entropy, binary_entropy_grad, sparsity_loss, LossWeights};
pub use params::{GradError, Gradients, ParamRegistry};
pub use tape::{record_frame, FrameTape, FrameViews, Upstream, ViewImage};
