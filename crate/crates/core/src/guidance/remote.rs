//! Blocking client for the guidance service.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, ClipRequest, ClipResponse, DecodeRequest, DecodeResponse, ErrorBody, SdsRequest, SdsResponse};
use super::{GuidanceError, GuidanceProvider, GuidanceRequest, GuidanceResponse, NoisePolicy};
use crate::render::ImageBuffer;

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    http: Client,
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self, GuidanceError> {
        let http = Client::builder().timeout(cfg.timeout).build().map_err(|e| GuidanceError::Transport(e.to_string()))?;
        Ok(Self { cfg, http })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn post<Q: Serialize, A: DeserializeOwned>(&self, path: &str, body: &Q) -> Result<A, GuidanceError> {
        let url = format!("{}{path}", self.cfg.base_url);
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * attempt);
            }
            let resp = match self.http.post(&url).json(body).send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let bytes = match resp.bytes() {
                Ok(b) => b,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            if status.is_success() {
                return serde_json::from_slice(&bytes)
                    .map_err(|e| GuidanceError::ProtocolVersionMismatch(format!("malformed response: {e}")));
            }
            let err: ErrorBody = serde_json::from_slice(&bytes).map_err(|_| {
                GuidanceError::ProtocolVersionMismatch(format!("HTTP {status} without an error document"))
            })?;
            return Err(match err.error_code.as_str() {
                wire::BAD_VERSION => GuidanceError::ProtocolVersionMismatch(err.message),
                wire::PROVIDER_ERROR => GuidanceError::ProviderError(err.message),
                _ if status.is_server_error() => GuidanceError::ProviderError(format!("{}: {}", err.error_code, err.message)),
                _ => GuidanceError::Rejected { code: err.error_code, message: err.message },
            });
        }
        Err(GuidanceError::Transport(format!("{url}: {last} (after {} attempts)", self.cfg.retries + 1)))
    }

    pub fn sds_grad(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        let img = &request.image;
        let body = SdsRequest {
            protocol_version: wire::PROTOCOL_VERSION,
            prompt: request.prompt.clone(),
            height: img.height,
            width: img.width,
            channels: img.channels,
            view: request.view,
            t: match request.noise {
                // seeded draws are resolved by the trainer before a request is built
                NoisePolicy::ServiceDefault | NoisePolicy::Seeded => None,
                NoisePolicy::Fixed(t) => Some(t),
            },
            image_b64: wire::encode_f32(&img.pixels),
            request_id: request.request_id.clone(),
        };
        let resp: SdsResponse = self.post(wire::SDS_GRAD, &body)?;
        let grad = wire::decode_f32(&resp.grad_b64, img.pixels.len()).map_err(GuidanceError::ProtocolVersionMismatch)?;
        Ok(GuidanceResponse { grad, t_used: resp.t_used, provider: resp.provider })
    }

    /// Per-frame scores and their mean for RGB frames.
    pub fn clip_score(&self, prompt: &str, frames: &[ImageBuffer]) -> Result<ClipResponse, GuidanceError> {
        let (height, width) = frames.first().map_or((0, 0), |f| (f.height, f.width));
        if let Some(bad) = frames.iter().find(|f| f.channels != 3 || f.height != height || f.width != width) {
            return Err(GuidanceError::ShapeMismatch { expected: height * width * 3, actual: bad.pixels.len() });
        }
        let body = ClipRequest {
            protocol_version: wire::PROTOCOL_VERSION,
            prompt: prompt.to_string(),
            height,
            width,
            image_b64: frames.iter().map(|f| wire::encode_f32(&f.pixels)).collect(),
        };
        let resp: ClipResponse = self.post(wire::CLIP_SCORE, &body)?;
        if resp.scores.len() != frames.len() {
            return Err(GuidanceError::ProtocolVersionMismatch(format!(
                "{} scores for {} frames",
                resp.scores.len(),
                frames.len()
            )));
        }
        Ok(resp)
    }

    /// Latent image to RGB at twice the resolution.
    pub fn decode(&self, latent: &ImageBuffer) -> Result<ImageBuffer, GuidanceError> {
        let body = DecodeRequest {
            protocol_version: wire::PROTOCOL_VERSION,
            height: latent.height,
            width: latent.width,
            channels: latent.channels,
            image_b64: wire::encode_f32(&latent.pixels),
        };
        let resp: DecodeResponse = self.post(wire::DECODE, &body)?;
        if resp.channels != 3 || resp.height != 2 * latent.height || resp.width != 2 * latent.width {
            return Err(GuidanceError::ProtocolVersionMismatch(format!(
                "decode returned {}x{}x{}",
                resp.height, resp.width, resp.channels
            )));
        }
        let pixels = wire::decode_f32(&resp.image_b64, resp.height * resp.width * 3)
            .map_err(GuidanceError::ProtocolVersionMismatch)?;
        let mut out = ImageBuffer::new(resp.height, resp.width, 3, latent.tag.clone());
        out.pixels = pixels;
        Ok(out)
    }
}

impl GuidanceProvider for RemoteClient {
    fn guide(&mut self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        self.sds_grad(request)
    }

    fn tag(&self) -> String {
        format!("remote:{}", self.cfg.base_url)
    }
}

