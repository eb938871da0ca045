//! Analytic reference scenes: constant-density, constant-color spheres,
//! each owned by one layout box. They render in closed form and serve as
//! photometric targets for the mock guidance provider.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Ray, Sample};
use crate::layout::Layout;
use crate::math::{Real, Vec3};
use crate::render::{Camera, ImageBuffer, RadianceSource, ViewTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSphere {
    /// Id of the layout box that owns this sphere.
    pub node: String,
    pub center: Vec3,
    pub radius: f64,
    pub density: f64,
    pub color: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub spheres: Vec<AnalyticSphere>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("target syntax error: {0}")]
    Syntax(String),
    #[error("invalid target scene: {0}")]
    Invalid(String),
}

impl AnalyticSphere {
    fn contains(&self, p: Vec3) -> bool {
        (p - self.center).norm() < self.radius
    }

    /// Chord `[t0, t1]` of the ray inside the sphere, clipped to `t >= 0`.
    fn chord(&self, ray: &Ray) -> Option<(f64, f64)> {
        let oc = ray.origin - self.center;
        let b = oc.dot(ray.direction);
        let c = oc.dot(oc) - self.radius * self.radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let (t0, t1) = ((-b - s).max(0.0), -b + s);
        (t1 > t0).then_some((t0, t1))
    }
}

impl AnalyticScene {
    pub fn parse(text: &str) -> Result<Self, AnalyticError> {
        serde_json::from_str(text).map_err(|e| AnalyticError::Syntax(e.to_string()))
    }

    pub fn channels(&self) -> usize {
        self.spheres.first().map_or(0, |s| s.color.len())
    }

    /// Every sphere must sit inside its own box, spheres must be disjoint
    /// and share one channel count.
    pub fn validate(&self, layout: &Layout) -> Result<(), AnalyticError> {
        let c = self.channels();
        for (i, s) in self.spheres.iter().enumerate() {
            let b = layout
                .find(&s.node)
                .ok_or_else(|| AnalyticError::Invalid(format!("sphere {i} refers to unknown box `{}`", s.node)))?;
            if s.color.len() != c || c == 0 {
                return Err(AnalyticError::Invalid(format!("sphere {i} has {} channels, expected {c}", s.color.len())));
            }
            if !(s.radius > 0.0 && s.density >= 0.0) {
                return Err(AnalyticError::Invalid(format!("sphere {i} needs radius > 0 and density >= 0")));
            }
            let (lo, hi) = (b.min(), b.max());
            if (0..3).any(|a| s.center[a] - s.radius < lo[a] || s.center[a] + s.radius > hi[a]) {
                return Err(AnalyticError::Invalid(format!("sphere {i} is not inside box `{}`", s.node)));
            }
            for (j, o) in self.spheres.iter().enumerate().skip(i + 1) {
                if (s.center - o.center).norm() < s.radius + o.radius {
                    return Err(AnalyticError::Invalid(format!("spheres {i} and {j} intersect")));
                }
            }
        }
        Ok(())
    }

    /// Closed-form render of the global view (`node = None`) or of one
    /// node's spheres. Assumes a validated scene.
    pub fn render_exact(&self, camera: &Camera, node: Option<&str>, background: &[f64]) -> ImageBuffer {
        let c = background.len();
        let tag = node.map_or(ViewTag::Global, |n| ViewTag::Local(n.to_string()));
        let mut img = ImageBuffer::new(camera.height as usize, camera.width as usize, c, tag);
        for (i, ray) in camera.rays().iter().enumerate() {
            let mut hits: Vec<(f64, f64, &AnalyticSphere)> = self
                .spheres
                .iter()
                .filter(|s| node.is_none_or(|n| s.node == n))
                .filter_map(|s| s.chord(ray).map(|(a, b)| (a, b, s)))
                .collect();
            hits.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut trans = 1.0;
            let mut color = vec![0.0; c];
            for (t0, t1, s) in hits {
                let alpha = 1.0 - (-s.density * (t1 - t0)).exp();
                for (acc, v) in color.iter_mut().zip(&s.color) {
                    *acc += trans * alpha * v;
                }
                trans *= 1.0 - alpha;
            }
            for (k, (acc, b)) in color.iter().zip(background).enumerate() {
                img.pixels[i * c + k] = (acc + trans * b) as f32;
            }
            img.weight_sum[i] = (1.0 - trans) as f32;
        }
        img
    }

    /// Evaluate against a layout's node indices.
    pub fn bind<'a>(&'a self, layout: &Layout) -> AnalyticSource<'a> {
        let per_node = layout
            .boxes
            .iter()
            .map(|b| (0..self.spheres.len()).filter(|&i| self.spheres[i].node == b.id).collect())
            .collect();
        AnalyticSource { scene: self, per_node }
    }
}

/// An [`AnalyticScene`] seen through a layout, usable by the renderer.
/// Composition is the identity: local and global values coincide.
pub struct AnalyticSource<'a> {
    scene: &'a AnalyticScene,
    per_node: Vec<Vec<usize>>,
}

impl AnalyticSource<'_> {
    fn eval<R: Real>(&self, s: &Sample, color: &mut [R]) -> R {
        color.iter_mut().for_each(|v| *v = R::zero());
        for &i in &self.per_node[s.node] {
            let sp = &self.scene.spheres[i];
            if sp.contains(s.x_g) {
                for (o, v) in color.iter_mut().zip(&sp.color) {
                    *o = R::of(*v);
                }
                return R::of(sp.density);
            }
        }
        R::zero()
    }
}

impl<R: Real> RadianceSource<R> for AnalyticSource<'_> {
    type Scratch = ();

    fn color_dim(&self) -> usize {
        self.scene.channels()
    }

    fn eval_local(&self, s: &Sample, _: &mut (), color: &mut [R]) -> R {
        self.eval(s, color)
    }

    fn eval_global(&self, s: &Sample, _: &mut (), local: &mut [R], global: &mut [R]) -> (R, R) {
        let sigma = self.eval(s, local);
        global.copy_from_slice(local);
        (sigma, sigma)
    }
}
