//! Per-object field: hash-grid encoding of the local position followed by a
//! small MLP producing a non-negative density and a view-independent color.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hashgrid::HashGridConfig;
use super::mlp::{Mlp, MlpCache};
use crate::math::{sigmoid, softplus, Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    /// Unbounded latent channels (4 for a latent diffusion image space).
    Latent,
    /// Sigmoid-squashed RGB, used by the photometric oracle.
    Rgb,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Latent => 4,
            ColorSpace::Rgb => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFieldConfig {
    pub grid: HashGridConfig,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub color_space: ColorSpace,
    /// Constant added to the raw density output before softplus.
    pub density_bias: f64,
    /// Hash table entries start uniform in `[-grid_init, grid_init]`.
    pub grid_init: f64,
}

impl Default for LocalFieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig { log2_table_size: 16, ..HashGridConfig::default() },
            hidden: 64,
            hidden_layers: 1,
            color_space: ColorSpace::Latent,
            density_bias: -1.0,
            grid_init: 1e-4,
        }
    }
}

impl LocalFieldConfig {
    pub fn color_dim(&self) -> usize {
        self.color_space.channels()
    }

    pub fn mlp(&self) -> Mlp {
        Mlp::with_depth(self.grid.output_dim(), self.hidden, self.hidden_layers + 1, 1 + self.color_dim())
    }

    pub fn param_count(&self) -> usize {
        self.grid.param_count() + self.mlp().param_count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalField<R> {
    pub cfg: LocalFieldConfig,
    mlp: Mlp,
    /// Hash table followed by the MLP parameters.
    pub params: Vec<R>,
}

#[derive(Clone, Debug, Default)]
pub struct LocalCache<R> {
    enc: Vec<R>,
    mlp: MlpCache<R>,
    raw: Vec<R>,
    d_raw: Vec<R>,
    d_enc: Vec<R>,
}

impl<R: Real> LocalField<R> {
    pub fn new<G: Rng + ?Sized>(cfg: LocalFieldConfig, rng: &mut G) -> Self {
        let mlp = cfg.mlp();
        let mut params: Vec<R> = (0..cfg.grid.param_count())
            .map(|_| R::of(rng.random_range(-cfg.grid_init..=cfg.grid_init)))
            .collect();
        params.extend(mlp.init::<R, _>(rng, 0..0));
        Self { cfg, mlp, params }
    }

    pub fn from_params(cfg: LocalFieldConfig, params: Vec<R>) -> Result<Self, String> {
        if params.len() != cfg.param_count() {
            return Err(format!("expected {} parameters, got {}", cfg.param_count(), params.len()));
        }
        Ok(Self { mlp: cfg.mlp(), cfg, params })
    }

    pub fn color_dim(&self) -> usize {
        self.cfg.color_dim()
    }

    fn split(&self) -> (&[R], &[R]) {
        self.params.split_at(self.cfg.grid.param_count())
    }

    /// Zero the color rows of the output layer (density row untouched).
    pub fn zero_color_head(&mut self) {
        let n_in = *self.mlp.dims.iter().rev().nth(1).unwrap();
        let out = self.mlp.output_dim();
        let tail = n_in * out + out;
        let len = self.params.len();
        let last = &mut self.params[len - tail..];
        for row in 1..out {
            last[row * n_in..(row + 1) * n_in].iter_mut().for_each(|v| *v = R::zero());
            last[n_in * out + row] = R::zero();
        }
    }

    /// Density and color at a local position; color is written to `color`.
    pub fn forward(&self, x_l: Vec3, cache: &mut LocalCache<R>, color: &mut [R]) -> R {
        let (table, weights) = self.split();
        cache.enc.resize(self.cfg.grid.output_dim(), R::zero());
        self.cfg.grid.encode(table, x_l, &mut cache.enc);
        let out = self.mlp.forward(weights, &cache.enc, &mut cache.mlp);
        cache.raw.clear();
        cache.raw.extend_from_slice(out);
        let sigma = softplus(cache.raw[0] + R::of(self.cfg.density_bias));
        match self.cfg.color_space {
            ColorSpace::Latent => color.copy_from_slice(&cache.raw[1..]),
            ColorSpace::Rgb => {
                for (c, r) in color.iter_mut().zip(&cache.raw[1..]) {
                    *c = sigmoid(*r);
                }
            }
        }
        sigma
    }

    /// Accumulate into `d_params` given upstream gradients of the matching forward.
    pub fn backward(&self, x_l: Vec3, cache: &mut LocalCache<R>, d_sigma: R, d_color: &[R], d_params: &mut [R]) {
        let split = self.cfg.grid.param_count();
        let weights = &self.params[split..];
        let mut d_raw = std::mem::take(&mut cache.d_raw);
        d_raw.clear();
        d_raw.resize(cache.raw.len(), R::zero());
        d_raw[0] = d_sigma * sigmoid(cache.raw[0] + R::of(self.cfg.density_bias));
        for (k, dc) in d_color.iter().enumerate() {
            d_raw[k + 1] = match self.cfg.color_space {
                ColorSpace::Latent => *dc,
                ColorSpace::Rgb => {
                    let s = sigmoid(cache.raw[k + 1]);
                    *dc * s * (R::one() - s)
                }
            };
        }
        let mut d_enc = std::mem::take(&mut cache.d_enc);
        d_enc.resize(self.cfg.grid.output_dim(), R::zero());
        let (d_table, d_weights) = d_params.split_at_mut(split);
        self.mlp.backward(weights, &mut cache.mlp, &d_raw, d_weights, Some(&mut d_enc));
        self.cfg.grid.backward(x_l, &d_enc, d_table);
        cache.d_raw = d_raw;
        cache.d_enc = d_enc;
    }

    pub fn eval(&self, x_l: Vec3) -> (R, Vec<R>) {
        let mut cache = LocalCache::default();
        let mut color = vec![R::zero(); self.color_dim()];
        let sigma = self.forward(x_l, &mut cache, &mut color);
        (sigma, color)
    }
}

/// `(σ_l, C_l)` of one field at a local position.
pub fn eval_local<R: Real>(field: &LocalField<R>, x_l: Vec3) -> (R, Vec<R>) {
    field.eval(x_l)
}
