//! The guidance boundary: image-space gradients for rendered views.

pub mod mock;
pub mod remote;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{Camera, ImageBuffer};

pub use mock::{mock_guidance, MockGuidance};
pub use remote::{RemoteClient, RemoteConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewAngles {
    pub azimuth: f64,
    pub elevation: f64,
}

/// Directional cue appended to a prompt for the given view.
pub fn direction_cue(view: ViewAngles) -> &'static str {
    if view.elevation > 60.0 {
        "overhead view"
    } else if view.azimuth.abs() < 45.0 {
        "front view"
    } else if view.azimuth.abs() > 135.0 {
        "back view"
    } else {
        "side view"
    }
}

pub fn augment_prompt(prompt: &str, view: ViewAngles) -> String {
    format!("{prompt}, {}", direction_cue(view))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoisePolicy {
    /// The service draws `t` itself.
    #[default]
    ServiceDefault,
    Fixed(u32),
    /// `t` drawn per step from the run seed, so runs can be replayed.
    Seeded,
}

/// Timestep range for seeded draws, out of 1000 diffusion steps.
pub const SEEDED_T_RANGE: std::ops::RangeInclusive<u32> = 20..=980;

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceRequest {
    /// Rendered view; its tag says which view it is.
    pub image: ImageBuffer,
    pub prompt: String,
    pub view: ViewAngles,
    pub noise: NoisePolicy,
    pub request_id: String,
    /// Full camera, for providers that re-render targets.
    pub camera: Option<Camera>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceResponse {
    /// Same shape as the request image.
    pub grad: Vec<f32>,
    pub t_used: Option<u32>,
    pub provider: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol mismatch: {0}")]
    ProtocolVersionMismatch(String),
    #[error("provider error: {0}")]
    ProviderError(String),
    #[error("request rejected ({code}): {message}")]
    Rejected { code: String, message: String },
    #[error("no target for view: {0}")]
    MissingTarget(String),
}

/// A source of image gradients. Implementations may keep their own
/// bookkeeping, but never touch the scene.
pub trait GuidanceProvider {
    fn guide(&mut self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError>;

    fn tag(&self) -> String;
}
