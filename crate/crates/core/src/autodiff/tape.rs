//! Forward recording of one camera frame and the exact backward pass.
//!
//! The forward stores per-sample densities and colors; the backward
//! re-evaluates each sample's fields to rebuild activation caches instead
//! of keeping them for every sample of the frame.

use rayon::prelude::*;

use super::loss::{binary_entropy_grad, sparsity_loss};
use super::params::{GradError, Gradients};
use crate::fields::CompositionGrads;
use crate::geometry::{id_ranks, sample_ray, Sample};
use crate::layout::Layout;
use crate::math::Real;
use crate::render::{composite, composite_backward, Camera, ImageBuffer, RenderOptions, ViewTag};
use crate::scene::{SceneModel, SceneScratch};

/// A rendered view kept in the working precision.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewImage<R> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<R>,
    pub weight_sum: Vec<R>,
}

impl<R: Real> ViewImage<R> {
    fn new(h: usize, w: usize, c: usize) -> Self {
        Self { height: h, width: w, channels: c, pixels: vec![R::zero(); h * w * c], weight_sum: vec![R::zero(); h * w] }
    }

    pub fn to_buffer(&self, tag: ViewTag) -> ImageBuffer {
        let mut img = ImageBuffer::new(self.height, self.width, self.channels, tag);
        img.pixels = self.pixels.iter().map(|v| v.to_f32_lossy()).collect();
        img.weight_sum = self.weight_sum.iter().map(|v| v.to_f32_lossy()).collect();
        img
    }
}

/// Global view, one local view per node, and every local rendering weight.
#[derive(Clone, Debug)]
pub struct FrameViews<R> {
    pub global: ViewImage<R>,
    pub locals: Vec<ViewImage<R>>,
    pub local_weights: Vec<R>,
}

impl<R: Real> FrameViews<R> {
    pub fn sparsity(&self) -> R {
        sparsity_loss(&self.local_weights)
    }
}

struct RayRecord<R> {
    pixel: usize,
    samples: Vec<Sample>,
    sigma_l: Vec<R>,
    color_l: Vec<R>,
    sigma_g: Vec<R>,
    color_g: Vec<R>,
    /// Weight of each sample inside its own node's local view.
    w_local: Vec<R>,
}

pub struct FrameTape<R> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_nodes: usize,
    background: Vec<R>,
    rays: Vec<RayRecord<R>>,
    n_samples: usize,
}

/// Upstream gradients for one frame. Each is already scaled by its loss
/// weight; absent views contribute nothing.
pub struct Upstream<'a, R> {
    pub global: Option<&'a [R]>,
    pub locals: Vec<Option<&'a [R]>>,
    /// Coefficient on the mean binary entropy of local weights.
    pub sparsity: R,
}

fn node_indices(samples: &[Sample], node: usize) -> impl Iterator<Item = usize> + '_ {
    samples.iter().enumerate().filter(move |(_, s)| s.node == node).map(|(i, _)| i)
}

/// Render the global and all local views of one camera, keeping the tape.
pub fn record_frame<R: Real>(
    scene: &SceneModel<R>,
    layout: &Layout,
    camera: &Camera,
    opts: &RenderOptions,
) -> (FrameTape<R>, FrameViews<R>) {
    let (h, w, c) = (camera.height as usize, camera.width as usize, scene.channels());
    let n_nodes = layout.boxes.len();
    let bg: Vec<R> = opts.background.iter().map(|v| R::of(*v)).collect();
    let ranks = id_ranks(layout);
    let rays = camera.rays();

    let records: Vec<RayRecord<R>> = rays
        .par_iter()
        .enumerate()
        .map_init(SceneScratch::default, |scratch, (pixel, ray)| {
            let samples = sample_ray(layout, &ranks, ray, &opts.samples).samples;
            let n = samples.len();
            let mut rec = RayRecord {
                pixel,
                sigma_l: Vec::with_capacity(n),
                color_l: vec![R::zero(); n * c],
                sigma_g: Vec::with_capacity(n),
                color_g: vec![R::zero(); n * c],
                w_local: vec![R::zero(); n],
                samples,
            };
            for (k, s) in rec.samples.iter().enumerate() {
                let (sl, sg) = crate::render::RadianceSource::eval_global(
                    scene,
                    s,
                    scratch,
                    &mut rec.color_l[k * c..(k + 1) * c],
                    &mut rec.color_g[k * c..(k + 1) * c],
                );
                rec.sigma_l.push(sl);
                rec.sigma_g.push(sg);
            }
            rec
        })
        .collect();

    let mut views = FrameViews {
        global: ViewImage::new(h, w, c),
        locals: (0..n_nodes).map(|_| ViewImage::new(h, w, c)).collect(),
        local_weights: Vec::new(),
    };
    let mut records = records;
    let mut weights = Vec::new();
    for rec in &mut records {
        let p = rec.pixel;
        let deltas: Vec<R> = rec.samples.iter().map(|s| R::of(s.delta)).collect();
        let out = composite(&rec.sigma_g, &deltas, &rec.color_g, &bg, None);
        views.global.pixels[p * c..(p + 1) * c].copy_from_slice(&out.color);
        views.global.weight_sum[p] = out.weight_sum;
        for node in 0..n_nodes {
            let (sig, del, col, idx) = gather(rec, node, c);
            let view = &mut views.locals[node];
            let out = composite(&sig, &del, &col, &bg, Some(&mut weights));
            view.pixels[p * c..(p + 1) * c].copy_from_slice(&out.color);
            view.weight_sum[p] = out.weight_sum;
            for (i, wv) in idx.iter().zip(&weights) {
                rec.w_local[*i] = *wv;
            }
        }
        views.local_weights.extend_from_slice(&rec.w_local);
    }
    let n_samples = views.local_weights.len();
    let tape = FrameTape { height: h, width: w, channels: c, n_nodes, background: bg, rays: records, n_samples };
    (tape, views)
}

fn gather<R: Real>(rec: &RayRecord<R>, node: usize, c: usize) -> (Vec<R>, Vec<R>, Vec<R>, Vec<usize>) {
    let idx: Vec<usize> = node_indices(&rec.samples, node).collect();
    let sig = idx.iter().map(|&i| rec.sigma_l[i]).collect();
    let del = idx.iter().map(|&i| R::of(rec.samples[i].delta_local)).collect();
    let col = idx.iter().flat_map(|&i| rec.color_l[i * c..(i + 1) * c].iter().copied()).collect();
    (sig, del, col, idx)
}

impl<R: Real> FrameTape<R> {
    pub fn sample_count(&self) -> usize {
        self.n_samples
    }

    fn check(&self, img: &[R]) -> Result<(), GradError> {
        let expected = self.height * self.width * self.channels;
        if img.len() == expected {
            Ok(())
        } else {
            Err(GradError::ShapeMismatch { expected, actual: img.len() })
        }
    }

    /// Parameter gradients of the upstream-weighted views. Rays are
    /// visited in pixel order, so the result does not depend on threads.
    pub fn backward(&self, scene: &SceneModel<R>, up: &Upstream<'_, R>) -> Result<Gradients<R>, GradError> {
        if let Some(g) = up.global {
            self.check(g)?;
        }
        if up.locals.len() > self.n_nodes {
            return Err(GradError::ShapeMismatch { expected: self.n_nodes, actual: up.locals.len() });
        }
        for g in up.locals.iter().flatten() {
            self.check(g)?;
        }
        let c = self.channels;
        let mut grads = Gradients::zeros(&scene.registry());
        let n_nodes = self.n_nodes;
        let sparsity_scale = if self.n_samples > 0 { up.sparsity / R::of(self.n_samples as f64) } else { R::zero() };
        let use_sparsity = sparsity_scale != R::zero();
        let zero_c = vec![R::zero(); c];

        let mut scratch = SceneScratch::<R>::default();
        let mut lc = vec![R::zero(); c];
        let mut gc = vec![R::zero(); c];
        let mut d_cl_from = vec![R::zero(); c];
        for rec in &self.rays {
            let n = rec.samples.len();
            if n == 0 {
                continue;
            }
            let p = rec.pixel;
            let mut d_sg = vec![R::zero(); n];
            let mut d_cg = vec![R::zero(); n * c];
            let mut d_sl = vec![R::zero(); n];
            let mut d_cl = vec![R::zero(); n * c];
            if let Some(g) = up.global {
                let deltas: Vec<R> = rec.samples.iter().map(|s| R::of(s.delta)).collect();
                composite_backward(
                    &rec.sigma_g,
                    &deltas,
                    &rec.color_g,
                    &self.background,
                    &g[p * c..(p + 1) * c],
                    &[],
                    &mut d_sg,
                    &mut d_cg,
                );
            }
            for node in 0..n_nodes {
                let g_img = up.locals.get(node).copied().flatten();
                if g_img.is_none() && !use_sparsity {
                    continue;
                }
                let (sig, del, col, idx) = gather(rec, node, c);
                if idx.is_empty() {
                    continue;
                }
                let g_color = g_img.map_or(&zero_c[..], |g| &g[p * c..(p + 1) * c]);
                let g_weight: Vec<R> = if use_sparsity {
                    idx.iter().map(|&i| sparsity_scale * binary_entropy_grad(rec.w_local[i])).collect()
                } else {
                    Vec::new()
                };
                let mut ds = vec![R::zero(); idx.len()];
                let mut dc = vec![R::zero(); idx.len() * c];
                composite_backward(&sig, &del, &col, &self.background, g_color, &g_weight, &mut ds, &mut dc);
                for (j, &i) in idx.iter().enumerate() {
                    d_sl[i] += ds[j];
                    for k in 0..c {
                        d_cl[i * c + k] += dc[j * c + k];
                    }
                }
            }

            for (k, s) in rec.samples.iter().enumerate() {
                let global_zero = d_sg[k] == R::zero() && d_cg[k * c..(k + 1) * c].iter().all(|v| *v == R::zero());
                let local_zero = d_sl[k] == R::zero() && d_cl[k * c..(k + 1) * c].iter().all(|v| *v == R::zero());
                if global_zero && local_zero {
                    continue;
                }
                let field = &scene.nodes[s.node];
                let sigma_l = field.forward(s.x_l, &mut scratch.local, &mut lc);
                if !global_zero {
                    scene.composition.forward(s.x_g, s.d_g, sigma_l, &lc, &mut scratch.comp, &mut gc);
                    // calibrator tensors follow the node tensors
                    let (dens, col) = grads.tensors[scene.nodes.len()..].split_at_mut(1);
                    let mut cg = CompositionGrads { density: &mut dens[0], color: &mut col[0] };
                    let mut d_sl_from = R::zero();
                    scene.composition.backward(
                        s.x_g,
                        &mut scratch.comp,
                        d_sg[k],
                        &d_cg[k * c..(k + 1) * c],
                        &mut cg,
                        &mut d_sl_from,
                        &mut d_cl_from,
                    );
                    d_sl[k] += d_sl_from;
                    for (a, b) in d_cl[k * c..(k + 1) * c].iter_mut().zip(&d_cl_from) {
                        *a += *b;
                    }
                }
                field.backward(s.x_l, &mut scratch.local, d_sl[k], &d_cl[k * c..(k + 1) * c], &mut grads.tensors[s.node]);
            }
        }
        Ok(grads)
    }

    /// Gradient of `<grad_image, global view>` alone.
    pub fn backward_from_image_grad(&self, scene: &SceneModel<R>, grad_image: &[R]) -> Result<Gradients<R>, GradError> {
        self.backward(scene, &Upstream { global: Some(grad_image), locals: Vec::new(), sparsity: R::zero() })
    }
}
