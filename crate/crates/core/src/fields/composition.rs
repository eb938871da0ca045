//! Composition module: residual calibrators that turn per-object
//! `(σ_l, C_l)` into scene-consistent `(σ_g, C_g)`.
//!
//! Density-based mode adds a density residual predicted from the global
//! position and a color residual predicted from the density calibrator's
//! hidden feature `h` and the view direction. Color-based mode leaves the
//! density untouched and predicts the color residual from the global
//! position and view direction. Both calibrators end in zero-initialized
//! residual rows, so a fresh module is the identity.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encoding::{encode_direction, SH_DIM};
use super::hashgrid::HashGridConfig;
use super::mlp::{Mlp, MlpCache};
use crate::math::{Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionMode {
    #[serde(rename = "density")]
    DensityBased,
    #[serde(rename = "color")]
    ColorBased,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("operation requires {expected:?} composition, scene is {actual:?}")]
pub struct WrongMode {
    pub expected: CompositionMode,
    pub actual: CompositionMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionConfig {
    pub mode: CompositionMode,
    pub alpha_d: f64,
    pub alpha_c: f64,
    /// Linear layers per calibrator (4 or 6).
    pub depth: usize,
    pub width: usize,
    pub h_dim: usize,
    /// Encoding of the global position.
    pub grid: HashGridConfig,
    pub color_dim: usize,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self {
            mode: CompositionMode::DensityBased,
            alpha_d: 1.0,
            alpha_c: 1.0,
            depth: 4,
            width: 64,
            h_dim: 15,
            grid: HashGridConfig { levels: 8, features: 2, coarsest: 16, finest: 256, log2_table_size: 16 },
            color_dim: 4,
        }
    }
}

impl CompositionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.depth != 4 && self.depth != 6 {
            return Err(format!("calibrator depth must be 4 or 6, got {}", self.depth));
        }
        if self.width == 0 || self.h_dim == 0 || self.color_dim == 0 {
            return Err("calibrator width, h_dim and color_dim must be positive".into());
        }
        if !(self.alpha_d.is_finite() && self.alpha_c.is_finite()) {
            return Err("alpha_d and alpha_c must be finite".into());
        }
        self.grid.validate()
    }

    fn density_mlp(&self) -> Mlp {
        Mlp::with_depth(self.grid.output_dim(), self.width, self.depth, 1 + self.h_dim)
    }

    fn color_mlp(&self) -> Mlp {
        let input = match self.mode {
            CompositionMode::DensityBased => self.h_dim + SH_DIM,
            CompositionMode::ColorBased => self.grid.output_dim() + SH_DIM,
        };
        Mlp::with_depth(input, self.width, self.depth, self.color_dim)
    }

    /// Parameter count of the density calibrator (grid + MLP); 0 in color mode.
    pub fn density_param_count(&self) -> usize {
        match self.mode {
            CompositionMode::DensityBased => self.grid.param_count() + self.density_mlp().param_count(),
            CompositionMode::ColorBased => 0,
        }
    }

    /// Parameter count of the color calibrator (plus its grid in color mode).
    pub fn color_param_count(&self) -> usize {
        let grid = match self.mode {
            CompositionMode::DensityBased => 0,
            CompositionMode::ColorBased => self.grid.param_count(),
        };
        grid + self.color_mlp().param_count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositionParams<R> {
    pub cfg: CompositionConfig,
    density_mlp: Mlp,
    color_mlp: Mlp,
    /// Density calibrator: global grid table then MLP. Empty in color mode.
    pub density: Vec<R>,
    /// Color calibrator: in color mode its own global grid table, then MLP.
    pub color: Vec<R>,
}

#[derive(Clone, Debug, Default)]
pub struct CompositionCache<R> {
    enc: Vec<R>,
    dens: MlpCache<R>,
    col: MlpCache<R>,
    col_in: Vec<R>,
    residual: R,
    active: bool,
    d_col_in: Vec<R>,
    d_dens_out: Vec<R>,
    d_enc: Vec<R>,
}

/// Gradient buffers matching [`CompositionParams::density`] / `color`.
#[derive(Debug)]
pub struct CompositionGrads<'a, R> {
    pub density: &'a mut [R],
    pub color: &'a mut [R],
}

impl<R: Real> CompositionParams<R> {
    /// Fresh calibrators: random hidden layers, zero residual rows.
    pub fn new<G: Rng + ?Sized>(cfg: CompositionConfig, rng: &mut G) -> Self {
        let density_mlp = cfg.density_mlp();
        let color_mlp = cfg.color_mlp();
        let grid_init = |rng: &mut G| -> Vec<R> {
            (0..cfg.grid.param_count()).map(|_| R::of(rng.random_range(-1e-4..=1e-4))).collect()
        };
        let density = match cfg.mode {
            CompositionMode::DensityBased => {
                let mut p = grid_init(rng);
                // only the residual row is zeroed; h keeps a random projection
                p.extend(density_mlp.init::<R, _>(rng, 0..1));
                p
            }
            CompositionMode::ColorBased => Vec::new(),
        };
        let mut color = match cfg.mode {
            CompositionMode::DensityBased => Vec::new(),
            CompositionMode::ColorBased => grid_init(rng),
        };
        color.extend(color_mlp.init::<R, _>(rng, 0..cfg.color_dim));
        Self { cfg, density_mlp, color_mlp, density, color }
    }

    pub fn from_params(cfg: CompositionConfig, density: Vec<R>, color: Vec<R>) -> Result<Self, String> {
        cfg.validate()?;
        if density.len() != cfg.density_param_count() || color.len() != cfg.color_param_count() {
            return Err(format!(
                "calibrator sizes {}/{} do not match config {}/{}",
                density.len(),
                color.len(),
                cfg.density_param_count(),
                cfg.color_param_count()
            ));
        }
        Ok(Self { density_mlp: cfg.density_mlp(), color_mlp: cfg.color_mlp(), cfg, density, color })
    }

    pub fn mode(&self) -> CompositionMode {
        self.cfg.mode
    }

    fn alpha_d(&self) -> R {
        R::of(self.cfg.alpha_d)
    }

    fn alpha_c(&self) -> R {
        R::of(self.cfg.alpha_c)
    }

    fn require(&self, mode: CompositionMode) -> Result<(), WrongMode> {
        if self.cfg.mode == mode {
            Ok(())
        } else {
            Err(WrongMode { expected: mode, actual: self.cfg.mode })
        }
    }

    /// Composite one sample. Returns `σ_g` and writes `C_g` to `color_out`.
    /// A zero `α` skips its calibrator, leaving the local value bit-exact.
    pub fn forward(
        &self,
        x_g: Vec3,
        d_g: Vec3,
        sigma_l: R,
        color_l: &[R],
        cache: &mut CompositionCache<R>,
        color_out: &mut [R],
    ) -> R {
        let (ad, ac) = (self.alpha_d(), self.alpha_c());
        let g = &self.cfg.grid;
        let gp = g.param_count();
        let mut sigma_g = sigma_l;
        cache.active = true;
        match self.cfg.mode {
            CompositionMode::DensityBased => {
                if ad == R::zero() && ac == R::zero() {
                    color_out.copy_from_slice(color_l);
                    return sigma_l;
                }
                cache.enc.resize(g.output_dim(), R::zero());
                g.encode(&self.density[..gp], x_g, &mut cache.enc);
                let out = self.density_mlp.forward(&self.density[gp..], &cache.enc, &mut cache.dens);
                cache.residual = out[0];
                if ad != R::zero() {
                    let pre = ad * out[0] + sigma_l;
                    cache.active = pre > R::zero();
                    sigma_g = if cache.active { pre } else { R::zero() };
                }
                if ac == R::zero() {
                    color_out.copy_from_slice(color_l);
                    return sigma_g;
                }
                cache.col_in.clear();
                cache.col_in.extend_from_slice(&out[1..]);
            }
            CompositionMode::ColorBased => {
                if ac == R::zero() {
                    color_out.copy_from_slice(color_l);
                    return sigma_l;
                }
                cache.enc.resize(g.output_dim(), R::zero());
                g.encode(&self.color[..gp], x_g, &mut cache.enc);
                cache.col_in.clear();
                cache.col_in.extend_from_slice(&cache.enc);
            }
        }
        let n = cache.col_in.len();
        cache.col_in.resize(n + SH_DIM, R::zero());
        encode_direction(d_g, &mut cache.col_in[n..]);
        let weights = match self.cfg.mode {
            CompositionMode::DensityBased => &self.color[..],
            CompositionMode::ColorBased => &self.color[gp..],
        };
        let res = self.color_mlp.forward(weights, &cache.col_in, &mut cache.col);
        for ((o, l), r) in color_out.iter_mut().zip(color_l).zip(res) {
            *o = ac * *r + *l;
        }
        sigma_g
    }

    /// Backward of [`forward`](Self::forward) for one sample: accumulates
    /// calibrator gradients and returns the local gradients through
    /// `d_sigma_l` / `d_color_l` (overwritten).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x_g: Vec3,
        cache: &mut CompositionCache<R>,
        d_sigma_g: R,
        d_color_g: &[R],
        grads: &mut CompositionGrads<'_, R>,
        d_sigma_l: &mut R,
        d_color_l: &mut [R],
    ) {
        let (ad, ac) = (self.alpha_d(), self.alpha_c());
        let g = &self.cfg.grid;
        let gp = g.param_count();
        d_color_l.copy_from_slice(d_color_g);
        *d_sigma_l = if cache.active { d_sigma_g } else { R::zero() };

        let color_used = ac != R::zero();
        let density_used = self.cfg.mode == CompositionMode::DensityBased && ad != R::zero();
        if !color_used && !density_used {
            return;
        }

        // color calibrator
        let mut d_col_in = std::mem::take(&mut cache.d_col_in);
        d_col_in.clear();
        if color_used {
            d_col_in.resize(cache.col_in.len(), R::zero());
            let d_res: Vec<R> = d_color_g.iter().map(|v| ac * *v).collect();
            let (gw_off, w_off) = match self.cfg.mode {
                CompositionMode::DensityBased => (0, 0),
                CompositionMode::ColorBased => (gp, gp),
            };
            self.color_mlp.backward(
                &self.color[w_off..],
                &mut cache.col,
                &d_res,
                &mut grads.color[gw_off..],
                Some(&mut d_col_in),
            );
        }

        match self.cfg.mode {
            CompositionMode::ColorBased => {
                g.backward(x_g, &d_col_in[..g.output_dim()], &mut grads.color[..gp]);
            }
            CompositionMode::DensityBased => {
                let mut d_out = std::mem::take(&mut cache.d_dens_out);
                d_out.clear();
                d_out.resize(1 + self.cfg.h_dim, R::zero());
                if density_used && cache.active {
                    d_out[0] = ad * d_sigma_g;
                }
                if color_used {
                    d_out[1..].copy_from_slice(&d_col_in[..self.cfg.h_dim]);
                }
                let mut d_enc = std::mem::take(&mut cache.d_enc);
                d_enc.clear();
                d_enc.resize(g.output_dim(), R::zero());
                let (d_table, d_mlp) = grads.density.split_at_mut(gp);
                self.density_mlp
                    .backward(&self.density[gp..], &mut cache.dens, &d_out, d_mlp, Some(&mut d_enc));
                g.backward(x_g, &d_enc, d_table);
                cache.d_dens_out = d_out;
                cache.d_enc = d_enc;
            }
        }
        cache.d_col_in = d_col_in;
    }

    /// `σ_g = max(0, α_d · f_d(x_g) + σ_l)` together with the hidden feature `h`.
    pub fn compose_density(&self, x_g: Vec3, sigma_l: R) -> Result<(R, Vec<R>), WrongMode> {
        self.require(CompositionMode::DensityBased)?;
        let g = &self.cfg.grid;
        let gp = g.param_count();
        let mut enc = vec![R::zero(); g.output_dim()];
        g.encode(&self.density[..gp], x_g, &mut enc);
        let mut cache = MlpCache::default();
        let out = self.density_mlp.forward(&self.density[gp..], &enc, &mut cache);
        let ad = self.alpha_d();
        let sigma = if ad == R::zero() { sigma_l } else { (ad * out[0] + sigma_l).max(R::zero()) };
        Ok((sigma, out[1..].to_vec()))
    }

    /// `C_g = α_c · f_c(h, d_g) + C_l`.
    pub fn compose_color(&self, h: &[R], d_g: Vec3, color_l: &[R]) -> Result<Vec<R>, WrongMode> {
        self.require(CompositionMode::DensityBased)?;
        let ac = self.alpha_c();
        if ac == R::zero() {
            return Ok(color_l.to_vec());
        }
        let mut input = h.to_vec();
        input.resize(h.len() + SH_DIM, R::zero());
        encode_direction(d_g, &mut input[h.len()..]);
        let mut cache = MlpCache::default();
        let res = self.color_mlp.forward(&self.color, &input, &mut cache);
        Ok(color_l.iter().zip(res).map(|(l, r)| ac * *r + *l).collect())
    }

    /// Color-only composition: `σ_g = σ_l`, `C_g = α_c · f_c(x_g, d_g) + C_l`.
    pub fn compose_color_only(&self, x_g: Vec3, d_g: Vec3, sigma_l: R, color_l: &[R]) -> Result<(R, Vec<R>), WrongMode> {
        self.require(CompositionMode::ColorBased)?;
        let mut cache = CompositionCache::default();
        let mut out = vec![R::zero(); color_l.len()];
        let sigma = self.forward(x_g, d_g, sigma_l, color_l, &mut cache, &mut out);
        Ok((sigma, out))
    }
}
