//! Fully connected network with ReLU hidden layers and a linear output,
//! stored as one flat parameter slice: per layer the row-major weight
//! matrix followed by the bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths from input to output; `dims.len() - 1` linear layers.
    pub dims: Vec<usize>,
}

/// Activations saved by a forward pass; reused across samples.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<R> {
    acts: Vec<R>,
    offsets: Vec<usize>,
    grad_a: Vec<R>,
    grad_b: Vec<R>,
}

/// Dot product with eight independent partial sums, so the compiler can
/// keep them in vector lanes. Summation order is fixed.
#[inline]
fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut acc = [R::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        let x: &[R; 8] = x.try_into().unwrap();
        let y: &[R; 8] = y.try_into().unwrap();
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

impl Mlp {
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "invalid MLP dims {dims:?}");
        Self { dims }
    }

    /// `depth` linear layers with `width` hidden channels.
    pub fn with_depth(input: usize, width: usize, depth: usize, output: usize) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(width, depth.saturating_sub(1)));
        dims.push(output);
        Self::new(dims)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offset of layer `l`'s weights within the flat parameters.
    fn layer_offset(&self, l: usize) -> usize {
        self.dims[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Xavier-uniform weights, zero biases. Rows of the final layer listed
    /// in `zero_output_rows` start at exactly zero.
    pub fn init<R: Real, G: Rng + ?Sized>(&self, rng: &mut G, zero_output_rows: std::ops::Range<usize>) -> Vec<R> {
        let mut p = Vec::with_capacity(self.param_count());
        let last = self.layers() - 1;
        for (l, w) in self.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for row in 0..fan_out {
                for _ in 0..fan_in {
                    let v = rng.random_range(-bound..bound);
                    let zero = l == last && zero_output_rows.contains(&row);
                    p.push(if zero { R::zero() } else { R::of(v) });
                }
            }
            p.extend(std::iter::repeat_n(R::zero(), fan_out));
        }
        p
    }

    pub fn forward<'c, R: Real>(&self, params: &[R], input: &[R], cache: &'c mut MlpCache<R>) -> &'c [R] {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(input.len(), self.input_dim());
        if cache.offsets.len() != self.dims.len() + 1 {
            cache.offsets.clear();
            let mut acc = 0;
            for &d in &self.dims {
                cache.offsets.push(acc);
                acc += d;
            }
            cache.offsets.push(acc);
            cache.acts.resize(acc, R::zero());
        }
        cache.acts[..input.len()].copy_from_slice(input);
        let mut p = 0;
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (lo, hi) = cache.acts.split_at_mut(cache.offsets[l + 1]);
            let x = &lo[cache.offsets[l]..];
            let y = &mut hi[..n_out];
            let (w, b) = params[p..p + n_in * n_out + n_out].split_at(n_in * n_out);
            for (o, yo) in y.iter_mut().enumerate() {
                let acc = b[o] + dot(&w[o * n_in..(o + 1) * n_in], x);
                *yo = if l < last && acc < R::zero() { R::zero() } else { acc };
            }
            p += n_in * n_out + n_out;
        }
        &cache.acts[cache.offsets[self.layers()]..]
    }

    /// Accumulate parameter gradients for upstream `d_out` and optionally
    /// write the input gradient. Requires the cache from the matching forward.
    pub fn backward<R: Real>(
        &self,
        params: &[R],
        cache: &mut MlpCache<R>,
        d_out: &[R],
        d_params: &mut [R],
        d_input: Option<&mut [R]>,
    ) {
        let widest = *self.dims.iter().max().unwrap();
        cache.grad_a.clear();
        cache.grad_a.resize(widest, R::zero());
        cache.grad_b.clear();
        cache.grad_b.resize(widest, R::zero());
        cache.grad_a[..d_out.len()].copy_from_slice(d_out);

        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let x = &cache.acts[cache.offsets[l]..cache.offsets[l] + n_in];
            let g = &cache.grad_a[..n_out];
            let (dw, db) = d_params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let go = g[o];
                if go == R::zero() {
                    continue;
                }
                db[o] += go;
                for (dwi, xi) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *dwi += go * *xi;
                }
            }
            let need_input = l > 0 || d_input.is_some();
            if !need_input {
                break;
            }
            let w = &params[off..off + n_in * n_out];
            let gi = &mut cache.grad_b[..n_in];
            gi.iter_mut().for_each(|v| *v = R::zero());
            for o in 0..n_out {
                let go = g[o];
                if go == R::zero() {
                    continue;
                }
                for (gv, wi) in gi.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *gv += go * *wi;
                }
            }
            if l > 0 {
                // ReLU mask of the layer input
                for (gv, xv) in gi.iter_mut().zip(x) {
                    if *xv <= R::zero() {
                        *gv = R::zero();
                    }
                }
            }
            std::mem::swap(&mut cache.grad_a, &mut cache.grad_b);
        }
        if let Some(d_in) = d_input {
            d_in.copy_from_slice(&cache.grad_a[..self.input_dim()]);
        }
    }
}
