//! JSON documents exchanged with the guidance service. Images travel as
//! base64 of little-endian `f32`, row-major `H·W·c`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::ViewAngles;

pub const PROTOCOL_VERSION: u32 = 1;

pub const SDS_GRAD: &str = "/v1/sds_grad";
pub const CLIP_SCORE: &str = "/v1/clip_score";
pub const DECODE: &str = "/v1/decode";
pub const HEALTH: &str = "/v1/health";

pub const BAD_SHAPE: &str = "BAD_SHAPE";
pub const BAD_VERSION: &str = "BAD_VERSION";
pub const PROMPT_EMPTY: &str = "PROMPT_EMPTY";
pub const PROVIDER_ERROR: &str = "PROVIDER_ERROR";

pub fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str, expected: usize) -> Result<Vec<f32>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() != expected * 4 {
        return Err(format!("expected {expected} floats, got {} bytes", bytes.len()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdsRequest {
    pub protocol_version: u32,
    pub prompt: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub view: ViewAngles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<u32>,
    pub image_b64: String,
    /// Idempotency key; retries of one request reuse it.
    #[serde(default)]
    pub request_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdsResponse {
    pub grad_b64: String,
    pub t_used: Option<u32>,
    pub provider: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRequest {
    pub protocol_version: u32,
    pub prompt: String,
    pub height: usize,
    pub width: usize,
    /// RGB frames, each `height·width·3` floats.
    pub image_b64: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipResponse {
    pub scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub protocol_version: u32,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub image_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub image_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    #[serde(default)]
    pub message: String,
}
