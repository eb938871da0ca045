//! Multiresolution hash-grid encoding with trilinear interpolation.

use serde::{Deserialize, Serialize};

use crate::math::{Real, Vec3};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features: usize,
    pub coarsest: u32,
    pub finest: u32,
    pub log2_table_size: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self { levels: 16, features: 2, coarsest: 16, finest: 512, log2_table_size: 19 }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.levels == 0 || self.features == 0 {
            return Err("levels and features must be >= 1".into());
        }
        if self.coarsest < 2 || self.finest < self.coarsest {
            return Err(format!(
                "resolutions must satisfy finest >= coarsest >= 2 (got {} / {})",
                self.coarsest, self.finest
            ));
        }
        if self.log2_table_size == 0 || self.log2_table_size > 26 {
            return Err(format!("log2 table size {} out of range 1..=26", self.log2_table_size));
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features
    }

    pub fn param_count(&self) -> usize {
        self.levels * self.table_size() * self.features
    }

    /// Cells per axis at `level`, growing geometrically from coarsest to finest.
    pub fn resolution(&self, level: usize) -> u32 {
        self.resolution_at(self.log_growth(), level)
    }

    fn log_growth(&self) -> f64 {
        if self.levels == 1 {
            return 0.0;
        }
        ((self.finest as f64).ln() - (self.coarsest as f64).ln()) / (self.levels - 1) as f64
    }

    fn resolution_at(&self, log_growth: f64, level: usize) -> u32 {
        if self.levels == 1 {
            return self.coarsest;
        }
        ((self.coarsest as f64) * (log_growth * level as f64).exp() + 1e-9).floor() as u32
    }

    /// Table slot of integer vertex `v` at `level` (dense when the level fits).
    pub fn vertex_slot(&self, level: usize, v: [u32; 3]) -> usize {
        self.slot_at(self.resolution(level), v)
    }

    fn slot_at(&self, res: u32, v: [u32; 3]) -> usize {
        let side = res as u64 + 1;
        let t = self.table_size() as u64;
        if side * side * side <= t {
            (v[0] as u64 + v[1] as u64 * side + v[2] as u64 * side * side) as usize
        } else {
            let h = (v[0].wrapping_mul(PRIMES[0])) ^ (v[1].wrapping_mul(PRIMES[1])) ^ (v[2].wrapping_mul(PRIMES[2]));
            // table size is a power of two
            (h as u64 & (t - 1)) as usize
        }
    }

    /// The 8 (table offset, trilinear weight) pairs for one level.
    fn corners(&self, level: usize, res: u32, x: Vec3) -> [(usize, f64); 8] {
        let mut base = [0u32; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let u = (x[a].clamp(-1.0, 1.0) + 1.0) * 0.5 * res as f64;
            // u >= 0, so truncation is floor
            let i = (u as u32).min(res - 1);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let level_off = level * self.table_size() * self.features;
        let mut out = [(0usize, 0f64); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut w = 1.0;
            let mut v = base;
            for a in 0..3 {
                if c >> a & 1 == 1 {
                    v[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            *slot = (level_off + self.slot_at(res, v) * self.features, w);
        }
        out
    }

    /// Encode `x` (clamped to `[-1,1]^3`) into `out` (length `levels * features`).
    pub fn encode<R: Real>(&self, table: &[R], x: Vec3, out: &mut [R]) {
        debug_assert_eq!(table.len(), self.param_count());
        debug_assert_eq!(out.len(), self.output_dim());
        let f = self.features;
        let lg = self.log_growth();
        for level in 0..self.levels {
            let res = self.resolution_at(lg, level);
            let dst = &mut out[level * f..(level + 1) * f];
            dst.iter_mut().for_each(|v| *v = R::zero());
            for (off, w) in self.corners(level, res, x) {
                let w = R::of(w);
                for k in 0..f {
                    dst[k] += w * table[off + k];
                }
            }
        }
    }

    /// Scatter `d_out` back into the table gradient.
    pub fn backward<R: Real>(&self, x: Vec3, d_out: &[R], d_table: &mut [R]) {
        let f = self.features;
        let lg = self.log_growth();
        for level in 0..self.levels {
            let res = self.resolution_at(lg, level);
            let g = &d_out[level * f..(level + 1) * f];
            if g.iter().all(|v| *v == R::zero()) {
                continue;
            }
            for (off, w) in self.corners(level, res, x) {
                let w = R::of(w);
                for k in 0..f {
                    d_table[off + k] += w * g[k];
                }
            }
        }
    }
}
