//! Volume rendering of local and composited global views.

pub mod camera;
pub mod image;
pub mod volume;

use rayon::prelude::*;

use crate::geometry::{id_ranks, sample_ray, Ray, SampleConfig};
use crate::layout::Layout;
use crate::math::Real;

pub use camera::{orbit_cameras, sample_camera, Camera, Phase};
pub use image::{psnr, ImageBuffer, ViewTag};
pub use volume::{composite, composite_backward, render_ray_global, render_ray_local, EvaluatedRay, RayOutput};

/// Anything that can evaluate `(σ, C)` for a merged sample: the trained
/// scene, or an analytic scene in tests.
pub trait RadianceSource<R: Real>: Sync {
    type Scratch: Default + Send;

    fn color_dim(&self) -> usize;

    /// Local `(σ_l, C_l)` of the sample's own node.
    fn eval_local(&self, sample: &crate::geometry::Sample, scratch: &mut Self::Scratch, color: &mut [R]) -> R;

    /// Composited `(σ_g, C_g)`; writes both the local and global colors and
    /// returns `(σ_l, σ_g)`.
    fn eval_global(
        &self,
        sample: &crate::geometry::Sample,
        scratch: &mut Self::Scratch,
        local_color: &mut [R],
        global_color: &mut [R],
    ) -> (R, R);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Global,
    /// Only the given node's samples, in the same global camera.
    Local(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub samples: SampleConfig,
    pub background: Vec<f64>,
}

impl RenderOptions {
    pub fn new(samples: SampleConfig, channels: usize) -> Self {
        Self { samples, background: vec![0.0; channels] }
    }
}

pub fn render_ray<R: Real, S: RadianceSource<R>>(
    source: &S,
    layout: &Layout,
    ranks: &[usize],
    ray: &Ray,
    view: View,
    opts: &RenderOptions,
    scratch: &mut S::Scratch,
) -> RayOutput<R> {
    let c = source.color_dim();
    let bg: Vec<R> = opts.background.iter().map(|v| R::of(*v)).collect();
    let rs = sample_ray(layout, ranks, ray, &opts.samples);
    let mut eval = EvaluatedRay::default();
    let mut local = vec![R::zero(); c];
    let mut global = vec![R::zero(); c];
    for s in &rs.samples {
        match view {
            View::Global => {
                let (_, sigma_g) = source.eval_global(s, scratch, &mut local, &mut global);
                eval.push(sigma_g, s.delta, &global);
            }
            View::Local(node) if s.node == node => {
                let sigma_l = source.eval_local(s, scratch, &mut local);
                eval.push(sigma_l, s.delta_local, &local);
            }
            View::Local(_) => {}
        }
    }
    eval.render(&bg, None)
}

/// Render one view, one ray per pixel. Output does not depend on the
/// number of worker threads.
pub fn render_image<R: Real, S: RadianceSource<R>>(
    source: &S,
    layout: &Layout,
    camera: &Camera,
    view: View,
    opts: &RenderOptions,
) -> ImageBuffer {
    let (h, w, c) = (camera.height as usize, camera.width as usize, source.color_dim());
    assert_eq!(opts.background.len(), c, "background must have one value per channel");
    let ranks = id_ranks(layout);
    let rays = camera.rays();
    let outputs: Vec<RayOutput<R>> = rays
        .par_iter()
        .map_init(S::Scratch::default, |scratch, ray| render_ray(source, layout, &ranks, ray, view, opts, scratch))
        .collect();
    let tag = match view {
        View::Global => ViewTag::Global,
        View::Local(node) => ViewTag::Local(layout.boxes[node].id.clone()),
    };
    let mut img = ImageBuffer::new(h, w, c, tag);
    for (i, out) in outputs.iter().enumerate() {
        for (k, v) in out.color.iter().enumerate() {
            img.pixels[i * c + k] = v.to_f32_lossy();
        }
        img.weight_sum[i] = out.weight_sum.to_f32_lossy();
    }
    img
}
