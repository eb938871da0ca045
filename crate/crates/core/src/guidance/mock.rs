//! Photometric target-pull guidance: `grad = image - target`.

use super::{GuidanceError, GuidanceProvider, GuidanceRequest, GuidanceResponse};
use crate::analytic::AnalyticScene;
use crate::render::{ImageBuffer, ViewTag};

pub const MOCK_TAG: &str = "mock";

pub fn mock_guidance(request: &GuidanceRequest, target: &ImageBuffer) -> Result<GuidanceResponse, GuidanceError> {
    let img = &request.image;
    if img.pixels.len() != target.pixels.len() || img.channels != target.channels {
        return Err(GuidanceError::ShapeMismatch { expected: img.pixels.len(), actual: target.pixels.len() });
    }
    Ok(GuidanceResponse {
        grad: img.pixels.iter().zip(&target.pixels).map(|(a, b)| a - b).collect(),
        t_used: None,
        provider: MOCK_TAG.into(),
    })
}

/// Mock guidance whose targets are exact renders of an analytic scene
/// from the request camera.
pub struct MockGuidance {
    pub scene: AnalyticScene,
    pub background: Vec<f64>,
    pub calls: usize,
}

impl MockGuidance {
    pub fn new(scene: AnalyticScene, background: Vec<f64>) -> Self {
        Self { scene, background, calls: 0 }
    }

    pub fn target(&self, request: &GuidanceRequest) -> Result<ImageBuffer, GuidanceError> {
        let camera = request.camera.as_ref().ok_or_else(|| GuidanceError::MissingTarget("request has no camera".into()))?;
        let node = match &request.image.tag {
            ViewTag::Global => None,
            ViewTag::Local(id) => Some(id.as_str()),
        };
        Ok(self.scene.render_exact(camera, node, &self.background))
    }
}

impl GuidanceProvider for MockGuidance {
    fn guide(&mut self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        self.calls += 1;
        let target = self.target(request)?;
        mock_guidance(request, &target)
    }

    fn tag(&self) -> String {
        MOCK_TAG.into()
    }
}
