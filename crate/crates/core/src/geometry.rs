//! Transformation module: ray/box intersection, per-box interval sampling,
//! global <-> local coordinate maps and the depth-ordered merge of every
//! box's samples into one global sequence per ray.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::layout::{Box3, Layout};
use crate::math::{mix_seed, Vec3};

/// Far-plane convention for the last sample of a ray.
pub const DEFAULT_FINAL_DELTA: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    /// (row, col) of the pixel this ray was generated for.
    pub pixel: (u32, u32),
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, pixel: (u32, u32)) -> Self {
        Self { origin, direction: direction.normalized(), pixel }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HitInterval {
    pub node: usize,
    pub t_near: f64,
    pub t_far: f64,
}

/// Slab test against an axis-aligned box. The interval is clipped to start
/// at `t = 0`; boxes entirely behind the origin are misses.
pub fn ray_box_intersect(ray: &Ray, b: &Box3) -> Option<(f64, f64)> {
    let (lo, hi) = (b.min(), b.max());
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for axis in 0..3 {
        let o = ray.origin[axis];
        let d = ray.direction[axis];
        if d == 0.0 {
            // parallel to this slab pair: inside it everywhere or nowhere
            if o < lo[axis] || o > hi[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut t0, mut t1) = ((lo[axis] - o) * inv, (hi[axis] - o) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_enter = t_enter.max(t0);
        t_exit = t_exit.min(t1);
    }
    let t_near = t_enter.max(0.0);
    if t_exit > t_near {
        Some((t_near, t_exit))
    } else {
        None
    }
}

/// `n` depths in `[t_near, t_far]`, ascending. Midpoints of `n` equal strata,
/// or one uniform draw per stratum when an RNG is supplied.
pub fn sample_interval<G: Rng + ?Sized>(t_near: f64, t_far: f64, n: usize, rng: Option<&mut G>) -> Vec<f64> {
    assert!(n >= 1, "sample_interval needs n >= 1");
    let width = (t_far - t_near) / n as f64;
    let clamp = |t: f64| t.clamp(t_near, t_far);
    match rng {
        None => (0..n).map(|k| clamp(t_near + (k as f64 + 0.5) * width)).collect(),
        Some(rng) => {
            let mut out: Vec<f64> = (0..n)
                .map(|k| clamp(t_near + (k as f64 + rng.random::<f64>()) * width))
                .collect();
            // rounding can reorder neighbours on degenerate intervals
            for k in 1..n {
                if out[k] < out[k - 1] {
                    out[k] = out[k - 1];
                }
            }
            out
        }
    }
}

pub fn to_local(b: &Box3, x_g: Vec3) -> Vec3 {
    (x_g - b.center).div_elem(b.half_extents)
}

pub fn to_global(b: &Box3, x_l: Vec3) -> Vec3 {
    x_l.mul_elem(b.half_extents) + b.center
}

pub fn local_direction(b: &Box3, d_g: Vec3) -> Vec3 {
    d_g.div_elem(b.half_extents).normalized()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    /// Depth along the global ray.
    pub t: f64,
    pub x_g: Vec3,
    pub x_l: Vec3,
    pub d_g: Vec3,
    /// Index of the owning box in the layout.
    pub node: usize,
    /// Distance to the next sample in the merged global sequence.
    pub delta: f64,
    /// Distance to the next sample of the same node.
    pub delta_local: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    Midpoint,
    /// Stratified jitter; per-ray streams are derived from `(seed, pixel)`.
    Stratified { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub n_per_box: usize,
    pub sampling: Sampling,
    pub final_delta: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { n_per_box: 32, sampling: Sampling::Midpoint, final_delta: DEFAULT_FINAL_DELTA }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    pub pixel: (u32, u32),
    pub samples: Vec<Sample>,
}

impl RaySamples {
    pub fn node_samples(&self, node: usize) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.node == node)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBatch {
    pub rays: Vec<RaySamples>,
}

/// Position of each box in lexicographic id order, used to break depth ties.
pub fn id_ranks(layout: &Layout) -> Vec<usize> {
    let mut order: Vec<usize> = (0..layout.boxes.len()).collect();
    order.sort_by(|&a, &b| layout.boxes[a].id.cmp(&layout.boxes[b].id));
    let mut rank = vec![0; order.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Intersect, sample, transform and merge for a single ray.
pub fn sample_ray(layout: &Layout, ranks: &[usize], ray: &Ray, cfg: &SampleConfig) -> RaySamples {
    let mut rng = match cfg.sampling {
        Sampling::Midpoint => None,
        Sampling::Stratified { seed } => Some(ChaCha8Rng::seed_from_u64(mix_seed(&[
            seed,
            ray.pixel.0 as u64,
            ray.pixel.1 as u64,
        ]))),
    };

    let mut per_node: Vec<Vec<Sample>> = Vec::new();
    for (node, b) in layout.boxes.iter().enumerate() {
        let Some((t_near, t_far)) = ray_box_intersect(ray, b) else {
            continue;
        };
        let ts = sample_interval(t_near, t_far, cfg.n_per_box, rng.as_mut());
        let mut samples: Vec<Sample> = ts
            .iter()
            .map(|&t| {
                let x_g = ray.at(t);
                Sample {
                    t,
                    x_g,
                    x_l: clamp_local(to_local(b, x_g)),
                    d_g: ray.direction,
                    node,
                    delta: 0.0,
                    delta_local: 0.0,
                }
            })
            .collect();
        fill_deltas(&mut samples, cfg.final_delta, |s| &mut s.delta_local);
        per_node.push(samples);
    }

    let mut merged = merge_by_depth(per_node, ranks);
    fill_deltas(&mut merged, cfg.final_delta, |s| &mut s.delta);
    RaySamples { pixel: ray.pixel, samples: merged }
}

pub fn build_sample_batch(layout: &Layout, rays: &[Ray], cfg: &SampleConfig) -> SampleBatch {
    let ranks = id_ranks(layout);
    SampleBatch {
        rays: rays.par_iter().map(|r| sample_ray(layout, &ranks, r, cfg)).collect(),
    }
}

/// Points on the box boundary can land a rounding error outside `[-1, 1]`.
fn clamp_local(x: Vec3) -> Vec3 {
    Vec3::new(x.x.clamp(-1.0, 1.0), x.y.clamp(-1.0, 1.0), x.z.clamp(-1.0, 1.0))
}

fn fill_deltas(samples: &mut [Sample], final_delta: f64, field: impl Fn(&mut Sample) -> &mut f64) {
    let n = samples.len();
    for k in 0..n {
        let d = if k + 1 < n { samples[k + 1].t - samples[k].t } else { final_delta };
        *field(&mut samples[k]) = d;
    }
}

/// k-way merge of per-node sorted lists on `(t, id rank)`.
fn merge_by_depth(lists: Vec<Vec<Sample>>, ranks: &[usize]) -> Vec<Sample> {
    let total = lists.iter().map(Vec::len).sum();
    let mut heads = vec![0usize; lists.len()];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        let mut best: Option<usize> = None;
        for (li, list) in lists.iter().enumerate() {
            let Some(s) = list.get(heads[li]) else { continue };
            best = match best {
                None => Some(li),
                Some(bi) => {
                    let b = &lists[bi][heads[bi]];
                    if s.t < b.t || (s.t == b.t && ranks[s.node] < ranks[b.node]) {
                        Some(li)
                    } else {
                        Some(bi)
                    }
                }
            };
        }
        let li = best.expect("remaining samples");
        out.push(lists[li][heads[li]]);
        heads[li] += 1;
    }
    out
}
