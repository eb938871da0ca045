//! Loss terms that live on the engine side.

use serde::{Deserialize, Serialize};

use super::params::{GradError, Gradients};
use crate::math::Real;

/// Clamp for the binary entropy's logarithms.
pub const ENTROPY_CLAMP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_g: f64,
    pub alpha_l: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_g: 100.0, alpha_l: 100.0, beta: 5e-4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        if [self.alpha_g, self.alpha_l, self.beta].iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(format!("loss weights must be finite and >= 0: {self:?}"))
        }
    }
}

fn clamped<R: Real>(w: R) -> R {
    let lo = R::of(ENTROPY_CLAMP);
    w.max(lo).min(R::one() - lo)
}

/// Binary entropy `-w ln w~ - (1-w) ln(1-w~)` of one weight, `w~` clamped.
pub fn binary_entropy<R: Real>(w: R) -> R {
    let c = clamped(w);
    -(w * c.ln()) - (R::one() - w) * (R::one() - c).ln()
}

/// `dH/dw = ln((1 - w~) / w~)`; the clamp-derivative terms cancel inside
/// the clamp and vanish outside it.
pub fn binary_entropy_grad<R: Real>(w: R) -> R {
    let c = clamped(w);
    (R::one() - c).ln() - c.ln()
}

/// Mean binary entropy of per-sample rendering weights (0 for no samples).
pub fn sparsity_loss<R: Real>(weights: &[R]) -> R {
    if weights.is_empty() {
        return R::zero();
    }
    weights.iter().map(|w| binary_entropy(*w)).sum::<R>() / R::of(weights.len() as f64)
}

/// `α_g · global + α_l · Σ locals + β · sparsity` over one registry.
pub fn assemble_total_gradient<R: Real>(
    global: &Gradients<R>,
    locals: &[Gradients<R>],
    sparsity: &Gradients<R>,
    w: &LossWeights,
) -> Result<Gradients<R>, GradError> {
    let mut total = Gradients::zeros(&global.registry);
    total.add_scaled(global, R::of(w.alpha_g))?;
    for l in locals {
        total.add_scaled(l, R::of(w.alpha_l))?;
    }
    total.add_scaled(sparsity, R::of(w.beta))?;
    Ok(total)
}
