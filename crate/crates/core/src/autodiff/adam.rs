//! Bias-corrected Adam over a list of flat tensors.

use serde::{Deserialize, Serialize};

use super::params::{GradError, Gradients};
use crate::math::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R> {
    pub cfg: AdamConfig,
    pub m: Vec<Vec<R>>,
    pub v: Vec<Vec<R>>,
    pub step: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            m: sizes.iter().map(|&n| vec![R::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![R::zero(); n]).collect(),
            step: 0,
        }
    }
}

/// One update. Tensors whose `frozen` flag is set keep both their values
/// and their moments.
pub fn adam_step<R: Real>(
    params: &mut [&mut Vec<R>],
    grads: &Gradients<R>,
    state: &mut AdamState<R>,
    frozen: &[bool],
) -> Result<(), GradError> {
    if params.len() != grads.tensors.len() || params.len() != state.m.len() {
        return Err(GradError::ShapeMismatch { expected: state.m.len(), actual: params.len() });
    }
    for ((p, g), m) in params.iter().zip(&grads.tensors).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(GradError::ShapeMismatch { expected: m.len(), actual: g.len() });
        }
    }
    state.step += 1;
    let c = state.cfg;
    let t = state.step as i32;
    let (b1, b2) = (R::of(c.beta1), R::of(c.beta2));
    let bc1 = R::one() - R::of(c.beta1.powi(t));
    let bc2 = R::one() - R::of(c.beta2.powi(t));
    let (lr, eps) = (R::of(c.lr), R::of(c.eps));
    for (i, p) in params.iter_mut().enumerate() {
        if frozen.get(i).copied().unwrap_or(false) {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((pv, gv), mv), vv) in p.iter_mut().zip(&grads.tensors[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (R::one() - b1) * *gv;
            *vv = b2 * *vv + (R::one() - b2) * *gv * *gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
