//! Emission-absorption accumulation along one ray and its exact backward.
//!
//! For samples with density `σ_k`, spacing `δ_k` and color `C_k`:
//! `T_k = exp(-Σ_{j<k} σ_j δ_j)`, `w_k = T_k (1 - exp(-σ_k δ_k))`,
//! `C = Σ_k w_k C_k + T_final · background`.

use crate::geometry::Sample;
use crate::math::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct RayOutput<R> {
    pub color: Vec<R>,
    pub weight_sum: R,
}

/// Accumulate one ray. `colors` holds `sigmas.len()` rows of `bg.len()`
/// channels. Per-sample weights are written to `weights` when given.
pub fn composite<R: Real>(
    sigmas: &[R],
    deltas: &[R],
    colors: &[R],
    bg: &[R],
    mut weights: Option<&mut Vec<R>>,
) -> RayOutput<R> {
    let c = bg.len();
    debug_assert_eq!(colors.len(), sigmas.len() * c);
    let mut color = vec![R::zero(); c];
    let mut optical = R::zero();
    let mut weight_sum = R::zero();
    if let Some(w) = weights.as_deref_mut() {
        w.clear();
    }
    for (k, (&s, &d)) in sigmas.iter().zip(deltas).enumerate() {
        let tau = s * d;
        let w = (-optical).exp() * (R::one() - (-tau).exp());
        optical += tau;
        weight_sum += w;
        for (acc, v) in color.iter_mut().zip(&colors[k * c..(k + 1) * c]) {
            *acc += w * *v;
        }
        if let Some(ws) = weights.as_deref_mut() {
            ws.push(w);
        }
    }
    let t_final = (-optical).exp();
    for (acc, b) in color.iter_mut().zip(bg) {
        *acc += t_final * *b;
    }
    RayOutput { color, weight_sum }
}

/// Gradients of `<g_color, C> + Σ_k g_weight[k] · w_k` with respect to every
/// `σ_k` and `C_k`. `g_weight` may be empty.
pub fn composite_backward<R: Real>(
    sigmas: &[R],
    deltas: &[R],
    colors: &[R],
    bg: &[R],
    g_color: &[R],
    g_weight: &[R],
    d_sigmas: &mut [R],
    d_colors: &mut [R],
) {
    let n = sigmas.len();
    let c = bg.len();
    let mut trans = Vec::with_capacity(n);
    let mut alpha_keep = Vec::with_capacity(n);
    let mut optical = R::zero();
    for k in 0..n {
        trans.push((-optical).exp());
        let tau = sigmas[k] * deltas[k];
        alpha_keep.push((-tau).exp());
        optical += tau;
    }
    let t_final = (-optical).exp();
    let dot = |a: &[R], b: &[R]| a.iter().zip(b).fold(R::zero(), |s, (x, y)| s + *x * *y);

    // suffix = Σ_{j>k} w_j q_j + T_final <g, bg>
    let mut suffix = t_final * dot(g_color, bg);
    for k in (0..n).rev() {
        let ck = &colors[k * c..(k + 1) * c];
        let w = trans[k] * (R::one() - alpha_keep[k]);
        let q = dot(g_color, ck) + g_weight.get(k).copied().unwrap_or(R::zero());
        for (dc, g) in d_colors[k * c..(k + 1) * c].iter_mut().zip(g_color) {
            *dc = w * *g;
        }
        let after = trans[k] * alpha_keep[k];
        d_sigmas[k] = deltas[k] * (after * q - suffix);
        suffix += w * q;
    }
}

/// Flattened `(σ, δ, C)` of evaluated samples, ready to composite.
#[derive(Clone, Debug, Default)]
pub struct EvaluatedRay<R> {
    pub sigmas: Vec<R>,
    pub deltas: Vec<R>,
    pub colors: Vec<R>,
}

impl<R: Real> EvaluatedRay<R> {
    pub fn clear(&mut self) {
        self.sigmas.clear();
        self.deltas.clear();
        self.colors.clear();
    }

    pub fn push(&mut self, sigma: R, delta: f64, color: &[R]) {
        self.sigmas.push(sigma);
        self.deltas.push(R::of(delta));
        self.colors.extend_from_slice(color);
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn render(&self, bg: &[R], weights: Option<&mut Vec<R>>) -> RayOutput<R> {
        composite(&self.sigmas, &self.deltas, &self.colors, bg, weights)
    }
}

/// Local view of one node: its own samples with node-local spacing.
pub fn render_ray_local<R: Real>(samples: &[Sample], sigmas: &[R], colors: &[R], bg: &[R]) -> RayOutput<R> {
    let deltas: Vec<R> = samples.iter().map(|s| R::of(s.delta_local)).collect();
    composite(sigmas, &deltas, colors, bg, None)
}

/// Global view: the merged, composited sequence with global spacing.
pub fn render_ray_global<R: Real>(samples: &[Sample], sigmas: &[R], colors: &[R], bg: &[R]) -> RayOutput<R> {
    let deltas: Vec<R> = samples.iter().map(|s| R::of(s.delta)).collect();
    composite(sigmas, &deltas, colors, bg, None)
}


/// `T_k` for every sample followed by the final transmittance.
pub fn transmittance_prefix<R: Real>(sigmas: &[R], deltas: &[R]) -> Vec<R> {
    let mut out = Vec::with_capacity(sigmas.len() + 1);
    let mut optical = R::zero();
    out.push(R::one());
    for (&s, &d) in sigmas.iter().zip(deltas) {
        optical += s * d;
        out.push((-optical).exp());
    }
    out
}
