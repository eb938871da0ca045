//! A deterministic stand-in for the guidance service. Speaks the same
//! HTTP/JSON protocol as the real one but needs no model weights.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum StubMode {
    /// Predicted noise equals injected noise: zero gradient.
    PerfectDenoiser,
    /// Returns this vector. A vector of length `c` is broadcast per pixel,
    /// a full `H·W·c` vector is returned as is.
    FixedVector(Vec<f32>),
    /// Returns the request image.
    Echo,
}

#[derive(Clone, Debug)]
pub struct StubConfig {
    pub mode: StubMode,
    pub provider: String,
    /// Channel count accepted by `/v1/sds_grad`.
    pub channels: usize,
    /// Reply with a body that is not a protocol document.
    pub malformed: bool,
    /// Reply with a provider failure.
    pub provider_error: bool,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self { mode: StubMode::PerfectDenoiser, provider: "stub".into(), channels: 4, malformed: false, provider_error: false }
    }
}

#[derive(Clone, Default)]
struct AppState {
    cfg: Arc<StubConfig>,
    log: Arc<Mutex<Vec<String>>>,
}

fn err(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error_code": code, "message": message.into() }))).into_response()
}

fn decode_f32(text: &str, n: usize) -> Option<Vec<f32>> {
    let bytes = STANDARD.decode(text).ok()?;
    (bytes.len() == 4 * n).then(|| bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn encode_f32(v: &[f32]) -> String {
    STANDARD.encode(v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>())
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    let v: Value = serde_json::from_slice(body).map_err(|e| err(StatusCode::BAD_REQUEST, "BAD_VERSION", e.to_string()))?;
    if v.get("protocol_version").and_then(Value::as_u64) != Some(PROTOCOL_VERSION) {
        return Err(err(StatusCode::BAD_REQUEST, "BAD_VERSION", "protocol_version must be 1"));
    }
    serde_json::from_value(v).map_err(|e| err(StatusCode::BAD_REQUEST, "BAD_SHAPE", e.to_string()))
}

#[derive(Deserialize)]
struct SdsBody {
    prompt: String,
    height: usize,
    width: usize,
    channels: usize,
    t: Option<u32>,
    image_b64: String,
    #[serde(default)]
    request_id: String,
}

async fn sds_grad(State(st): State<AppState>, body: Bytes) -> Response {
    let req: SdsBody = match parse(&body) {
        Ok(r) => r,
        Err(e) => return e,
    };
    st.log.lock().unwrap().push(req.request_id.clone());
    let cfg = &st.cfg;
    if req.prompt.trim().is_empty() {
        return err(StatusCode::BAD_REQUEST, "PROMPT_EMPTY", "prompt is empty");
    }
    if req.channels != cfg.channels {
        return err(StatusCode::BAD_REQUEST, "BAD_SHAPE", format!("channels must be {}", cfg.channels));
    }
    let n = req.height * req.width * req.channels;
    let Some(image) = decode_f32(&req.image_b64, n) else {
        return err(StatusCode::BAD_REQUEST, "BAD_SHAPE", "image does not match height*width*channels");
    };
    if cfg.provider_error {
        return err(StatusCode::INTERNAL_SERVER_ERROR, "PROVIDER_ERROR", "stub configured to fail");
    }
    if cfg.malformed {
        return (StatusCode::OK, Json(json!({ "gradient": "nope" }))).into_response();
    }
    let grad = match &cfg.mode {
        StubMode::PerfectDenoiser => vec![0.0; n],
        StubMode::Echo => image,
        StubMode::FixedVector(v) if v.len() == n => v.clone(),
        StubMode::FixedVector(v) if v.len() == req.channels => v.iter().copied().cycle().take(n).collect(),
        StubMode::FixedVector(v) => {
            return err(StatusCode::BAD_REQUEST, "BAD_SHAPE", format!("fixed vector has {} values", v.len()))
        }
    };
    Json(json!({ "grad_b64": encode_f32(&grad), "t_used": req.t.unwrap_or(500), "provider": cfg.provider })).into_response()
}

#[derive(Deserialize)]
struct ClipBody {
    prompt: String,
    height: usize,
    width: usize,
    image_b64: Vec<String>,
}

async fn clip_score(State(_): State<AppState>, body: Bytes) -> Response {
    let req: ClipBody = match parse(&body) {
        Ok(r) => r,
        Err(e) => return e,
    };
    if req.prompt.trim().is_empty() {
        return err(StatusCode::BAD_REQUEST, "PROMPT_EMPTY", "prompt is empty");
    }
    if req.image_b64.is_empty() {
        return err(StatusCode::BAD_REQUEST, "BAD_SHAPE", "no frames");
    }
    let mut scores = Vec::new();
    for frame in &req.image_b64 {
        if decode_f32(frame, req.height * req.width * 3).is_none() {
            return err(StatusCode::BAD_REQUEST, "BAD_SHAPE", "frame is not height*width*3");
        }
        let d = Sha256::new().chain_update(req.prompt.as_bytes()).chain_update(frame.as_bytes()).finalize();
        let x = u64::from_le_bytes(d[..8].try_into().unwrap());
        scores.push((x >> 11) as f64 / (1u64 << 53) as f64 * 100.0);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Json(json!({ "scores": scores, "mean": mean })).into_response()
}

#[derive(Deserialize)]
struct DecodeBody {
    height: usize,
    width: usize,
    channels: usize,
    image_b64: String,
}

/// First three channels, bilinearly upsampled by two (half-pixel centers,
/// edge clamped).
pub fn stub_decode(latent: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; oh * ow * 3];
    let at = |r: usize, q: usize, k: usize| latent[(r * w + q) * c + k];
    for r in 0..oh {
        let y = ((r as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (h - 1) as f32);
        let (y0, fy) = (y.floor() as usize, y - y.floor());
        let y1 = (y0 + 1).min(h - 1);
        for q in 0..ow {
            let x = ((q as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (w - 1) as f32);
            let (x0, fx) = (x.floor() as usize, x - x.floor());
            let x1 = (x0 + 1).min(w - 1);
            for k in 0..3 {
                let top = at(y0, x0, k) * (1.0 - fx) + at(y0, x1, k) * fx;
                let bot = at(y1, x0, k) * (1.0 - fx) + at(y1, x1, k) * fx;
                out[(r * ow + q) * 3 + k] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

async fn decode(State(_): State<AppState>, body: Bytes) -> Response {
    let req: DecodeBody = match parse(&body) {
        Ok(r) => r,
        Err(e) => return e,
    };
    if req.channels != 4 || req.height == 0 || req.width == 0 {
        return err(StatusCode::BAD_REQUEST, "BAD_SHAPE", "decode expects a non-empty 4-channel latent");
    }
    let Some(latent) = decode_f32(&req.image_b64, req.height * req.width * 4) else {
        return err(StatusCode::BAD_REQUEST, "BAD_SHAPE", "image does not match height*width*4");
    };
    let rgb = stub_decode(&latent, req.height, req.width, 4);
    Json(json!({ "height": 2 * req.height, "width": 2 * req.width, "channels": 3, "image_b64": encode_f32(&rgb) }))
        .into_response()
}

async fn health(State(st): State<AppState>) -> Response {
    Json(json!({ "provider": st.cfg.provider, "stub": true, "protocol_version": PROTOCOL_VERSION })).into_response()
}

pub fn router(cfg: StubConfig) -> Router {
    router_with_log(cfg, Arc::default())
}

fn router_with_log(cfg: StubConfig, log: Arc<Mutex<Vec<String>>>) -> Router {
    Router::new()
        .route("/v1/sds_grad", post(sds_grad))
        .route("/v1/clip_score", post(clip_score))
        .route("/v1/decode", post(decode))
        .route("/v1/health", get(health))
        .with_state(AppState { cfg: Arc::new(cfg), log })
}

/// A stub server running on a background thread; stops on drop.
pub struct StubHandle {
    pub addr: SocketAddr,
    log: Arc<Mutex<Vec<String>>>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl StubHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Request ids seen by `/v1/sds_grad`, in arrival order.
    pub fn request_ids(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }
}

impl Drop for StubHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serve on `127.0.0.1` at an ephemeral port.
pub fn spawn(cfg: StubConfig) -> std::io::Result<StubHandle> {
    let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let log: Arc<Mutex<Vec<String>>> = Arc::default();
    let app = router_with_log(cfg, log.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().expect("tokio runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .expect("stub server");
        });
    });
    Ok(StubHandle { addr, log, shutdown: Some(tx), thread: Some(thread) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_of_constant_latent_is_constant() {
        let latent: Vec<f32> = (0..2 * 3).flat_map(|_| [0.25, 0.5, 0.75, 9.0]).collect();
        let rgb = stub_decode(&latent, 2, 3, 4);
        assert_eq!(rgb.len(), 4 * 6 * 3);
        for px in rgb.chunks(3) {
            assert_eq!(px, [0.25, 0.5, 0.75]);
        }
    }
}
