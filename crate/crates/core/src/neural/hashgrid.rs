//! Multiresolution hash encoding of positions in the unit cube.

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::rng::RngStream;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: u32,
    pub features: u32,
    pub base_resolution: u32,
    pub log2_table_size: u32,
    /// Resolution multiplier between consecutive levels.
    pub growth: f32,
    /// Initial features are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            features: 2,
            base_resolution: 16,
            log2_table_size: 15,
            growth: 2.0,
            init_scale: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Level {
    resolution: u32,
    /// Number of feature vectors in this level's table.
    size: u32,
    dense: bool,
    offset: usize,
}

/// Per-sample corner indices and trilinear weights kept for the backward
/// pass.
#[derive(Debug, Clone, Default)]
pub struct GridCache {
    pub index: Vec<u32>,
    pub weight: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid {
    pub config: HashGridConfig,
    levels: Vec<Level>,
    param_count: usize,
}

impl HashGrid {
    pub fn new(config: HashGridConfig) -> Self {
        let table = 1u64 << config.log2_table_size;
        let mut levels = Vec::new();
        let mut offset = 0usize;
        for l in 0..config.levels {
            let resolution = (config.base_resolution as f64 * (config.growth as f64).powi(l as i32)).floor() as u32;
            let vertices = (resolution as u64 + 1).pow(3);
            let dense = vertices <= table;
            let size = if dense { vertices } else { table } as u32;
            levels.push(Level {
                resolution,
                size,
                dense,
                offset,
            });
            offset += size as usize * config.features as usize;
        }
        Self {
            config,
            levels,
            param_count: offset,
        }
    }

    pub fn output_dim(&self) -> usize {
        (self.config.levels * self.config.features) as usize
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn level_resolution(&self, level: usize) -> u32 {
        self.levels[level].resolution
    }

    pub fn level_is_dense(&self, level: usize) -> bool {
        self.levels[level].dense
    }

    pub fn init_params(&self, params: &mut [f32], rng: &mut RngStream) {
        let s = self.config.init_scale;
        for p in params.iter_mut() {
            *p = (rng.next_f32() * 2.0 - 1.0) * s;
        }
    }

    fn corner_index(level: &Level, c: [u32; 3]) -> u32 {
        if level.dense {
            let r = level.resolution + 1;
            c[0] + c[1] * r + c[2] * r * r
        } else {
            let h = c[0].wrapping_mul(PRIMES[0]) ^ c[1].wrapping_mul(PRIMES[1]) ^ c[2].wrapping_mul(PRIMES[2]);
            h % level.size
        }
    }

    /// Corner slots and trilinear weights of `p` at one level.
    pub fn corners(&self, level: usize, p: Vec3) -> ([u32; 8], [f32; 8]) {
        let lv = &self.levels[level];
        let res = lv.resolution as f32;
        let mut cell = [0u32; 3];
        let mut frac = [0f32; 3];
        for k in 0..3 {
            let x = p[k].clamp(0.0, 1.0) * res;
            let f = x.floor().min(res - 1.0).max(0.0);
            cell[k] = f as u32;
            frac[k] = x - f;
        }
        let mut idx = [0u32; 8];
        let mut w = [0f32; 8];
        for corner in 0..8 {
            let mut c = cell;
            let mut weight = 1.0;
            for k in 0..3 {
                if corner & (1 << k) != 0 {
                    c[k] += 1;
                    weight *= frac[k];
                } else {
                    weight *= 1.0 - frac[k];
                }
            }
            idx[corner] = Self::corner_index(lv, c);
            w[corner] = weight;
        }
        (idx, w)
    }

    /// Encode `p` (already mapped to the unit cube) into `out`, optionally
    /// appending corner data to `cache`.
    pub fn encode(&self, params: &[f32], p: Vec3, out: &mut [f32], mut cache: Option<&mut GridCache>) {
        let nf = self.config.features as usize;
        for (l, lv) in self.levels.iter().enumerate() {
            let (idx, w) = self.corners(l, p);
            let dst = &mut out[l * nf..(l + 1) * nf];
            dst.fill(0.0);
            for c in 0..8 {
                let base = lv.offset + idx[c] as usize * nf;
                for f in 0..nf {
                    dst[f] += w[c] * params[base + f];
                }
            }
            if let Some(cache) = cache.as_deref_mut() {
                cache.index.extend(idx.iter().map(|&i| (lv.offset + i as usize * nf) as u32));
                cache.weight.extend_from_slice(&w);
            }
        }
    }

    /// Scatter output gradients back onto the feature tables.
    /// `d_out` holds `output_dim` values per sample in cache order.
    pub fn backward(&self, cache: &GridCache, d_out: &[f32], grad: &mut [f32]) {
        let nf = self.config.features as usize;
        let nl = self.levels.len();
        let n = cache.index.len() / (8 * nl);
        for s in 0..n {
            for l in 0..nl {
                let dg = &d_out[(s * nl + l) * nf..(s * nl + l + 1) * nf];
                let base = (s * nl + l) * 8;
                for c in 0..8 {
                    let w = cache.weight[base + c];
                    let at = cache.index[base + c] as usize;
                    for f in 0..nf {
                        grad[at + f] += w * dg[f];
                    }
                }
            }
        }
    }
}
