//! Multiresolution hash encoding.
//!
//! Each level holds a table of `features_per_level`-wide entries indexed by the
//! integer vertices of a grid of resolution `floor(base * scale^level)`. Levels
//! whose vertex count fits the table use a dense index; finer levels hash the
//! vertex coordinates with the usual spatial primes. Features are interpolated
//! multilinearly from the `2^dims` cell corners and concatenated across levels.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RnaError};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub n_levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub per_level_scale: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            n_levels: 16,
            features_per_level: 2,
            log2_table_size: 15,
            base_resolution: 16,
            per_level_scale: 1.5,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels == 0 || self.features_per_level == 0 {
            return Err(RnaError::contract("hash grid needs at least one level and feature"));
        }
        if self.log2_table_size == 0 || self.log2_table_size > 26 {
            return Err(RnaError::contract(format!(
                "hash table size 2^{} out of range",
                self.log2_table_size
            )));
        }
        if self.base_resolution == 0 {
            return Err(RnaError::contract("hash grid base resolution must be positive"));
        }
        if !(self.per_level_scale > 1.0) {
            return Err(RnaError::contract(format!(
                "per-level scale must exceed 1, got {}",
                self.per_level_scale
            )));
        }
        Ok(())
    }

    pub fn output_dims(&self) -> usize {
        self.n_levels * self.features_per_level
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Level {
    resolution: usize,
    entries: usize,
    offset: usize,
    dense: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid {
    config: HashGridConfig,
    dims: usize,
    levels: Vec<Level>,
    pub(crate) params: Vec<f64>,
}

/// Accumulated gradient of a hash table. Only entries visited since the last
/// [`clear`](Self::clear) are non-zero and listed in `touched`.
#[derive(Debug, Clone)]
pub struct SparseGrad {
    pub(crate) values: Vec<f64>,
    pub(crate) touched: Vec<u32>,
    mark: Vec<bool>,
    features: usize,
}

impl SparseGrad {
    pub fn new(n_entries: usize, features: usize) -> Self {
        Self {
            values: vec![0.0; n_entries * features],
            touched: Vec::new(),
            mark: vec![false; n_entries],
            features,
        }
    }

    #[inline]
    fn add(&mut self, entry: u32, f: usize, v: f64) {
        let e = entry as usize;
        if !self.mark[e] {
            self.mark[e] = true;
            self.touched.push(entry);
        }
        self.values[e * self.features + f] += v;
    }

    pub fn clear(&mut self) {
        for &e in &self.touched {
            let e = e as usize;
            self.mark[e] = false;
            for f in 0..self.features {
                self.values[e * self.features + f] = 0.0;
            }
        }
        self.touched.clear();
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn sum_squares(&self) -> f64 {
        self.touched
            .iter()
            .flat_map(|&e| {
                let b = e as usize * self.features;
                self.values[b..b + self.features].iter()
            })
            .map(|v| v * v)
            .sum()
    }

    pub fn scale(&mut self, k: f64) {
        for &e in &self.touched {
            let b = e as usize * self.features;
            self.values[b..b + self.features]
                .iter_mut()
                .for_each(|v| *v *= k);
        }
    }

    pub fn as_dense(&self) -> &[f64] {
        &self.values
    }
}

/// Per-batch record of the corners and weights used by a forward pass.
#[derive(Debug, Clone)]
pub struct HashCache {
    n: usize,
    corners: Vec<u32>,
    weights: Vec<f64>,
    frac: Vec<f64>,
    clamped: Vec<bool>,
}

impl HashGrid {
    pub fn new(config: HashGridConfig, dims: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if !(1..=3).contains(&dims) {
            return Err(RnaError::contract(format!("hash grid supports 1-3 dims, got {dims}")));
        }
        let table = 1usize << config.log2_table_size;
        let mut levels = Vec::with_capacity(config.n_levels);
        let mut offset = 0;
        for l in 0..config.n_levels {
            let resolution =
                ((config.base_resolution as f64) * config.per_level_scale.powi(l as i32)).floor() as usize;
            let resolution = resolution.max(1);
            let dense_size = (resolution + 1).checked_pow(dims as u32);
            let (entries, dense) = match dense_size {
                Some(s) if s <= table => (s, true),
                _ => (table, false),
            };
            levels.push(Level {
                resolution,
                entries,
                offset,
                dense,
            });
            offset += entries;
        }
        let params = (0..offset * config.features_per_level)
            .map(|_| rng.random_range(-1e-4..1e-4))
            .collect();
        Ok(Self {
            config,
            dims,
            levels,
            params,
        })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn output_dims(&self) -> usize {
        self.config.output_dims()
    }

    pub fn n_entries(&self) -> usize {
        self.params.len() / self.config.features_per_level
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn new_grad(&self) -> SparseGrad {
        SparseGrad::new(self.n_entries(), self.config.features_per_level)
    }

    pub fn level_resolutions(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.resolution).collect()
    }

    #[inline]
    fn entry_index(&self, level: &Level, vertex: &[usize; 3]) -> u32 {
        let local = if level.dense {
            let stride = level.resolution + 1;
            let mut idx = 0usize;
            let mut mul = 1usize;
            for d in 0..self.dims {
                idx += vertex[d] * mul;
                mul *= stride;
            }
            idx
        } else {
            let mut h = 0u32;
            for d in 0..self.dims {
                h ^= (vertex[d] as u32).wrapping_mul(PRIMES[d]);
            }
            (h as usize) & (level.entries - 1)
        };
        (level.offset + local) as u32
    }

    pub fn forward(&self, points: ArrayView2<f64>) -> (Array2<f64>, HashCache) {
        let n = points.nrows();
        let dims = self.dims;
        let n_corners = 1usize << dims;
        let n_levels = self.levels.len();
        let feats = self.config.features_per_level;
        let mut out = Array2::<f64>::zeros((n, n_levels * feats));
        let mut corners = vec![0u32; n * n_levels * n_corners];
        let mut weights = vec![0.0; n * n_levels * n_corners];
        let mut frac = vec![0.0; n * n_levels * dims];
        let mut clamped = vec![false; n * dims];

        for i in 0..n {
            let mut unit = [0.0f64; 3];
            for d in 0..dims {
                let raw = (points[[i, d]] + 1.0) * 0.5;
                if !(raw > 0.0 && raw < 1.0) {
                    clamped[i * dims + d] = true;
                }
                unit[d] = raw.clamp(0.0, 1.0);
            }
            let mut row = out.row_mut(i);
            for (l, level) in self.levels.iter().enumerate() {
                let r = level.resolution;
                let mut cell = [0usize; 3];
                let mut f = [0.0f64; 3];
                for d in 0..dims {
                    let pos = unit[d] * r as f64;
                    let c = (pos.floor() as usize).min(r - 1);
                    cell[d] = c;
                    f[d] = pos - c as f64;
                    frac[(i * n_levels + l) * dims + d] = f[d];
                }
                for k in 0..n_corners {
                    let mut vertex = [0usize; 3];
                    let mut w = 1.0;
                    for d in 0..dims {
                        let bit = (k >> d) & 1;
                        vertex[d] = cell[d] + bit;
                        w *= if bit == 1 { f[d] } else { 1.0 - f[d] };
                    }
                    let e = self.entry_index(level, &vertex);
                    let slot = (i * n_levels + l) * n_corners + k;
                    corners[slot] = e;
                    weights[slot] = w;
                    let base = e as usize * feats;
                    for j in 0..feats {
                        row[l * feats + j] += w * self.params[base + j];
                    }
                }
            }
        }
        (
            out,
            HashCache {
                n,
                corners,
                weights,
                frac,
                clamped,
            },
        )
    }

    /// Accumulates table gradients into `grad` and, when requested, returns the
    /// gradient with respect to the input coordinates.
    pub fn backward(
        &self,
        cache: &HashCache,
        d_out: ArrayView2<f64>,
        grad: Option<&mut SparseGrad>,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let n = cache.n;
        let dims = self.dims;
        let n_corners = 1usize << dims;
        let n_levels = self.levels.len();
        let feats = self.config.features_per_level;

        if let Some(grad) = grad {
            for i in 0..n {
                let row = d_out.row(i);
                for l in 0..n_levels {
                    for k in 0..n_corners {
                        let slot = (i * n_levels + l) * n_corners + k;
                        let w = cache.weights[slot];
                        if w == 0.0 {
                            continue;
                        }
                        let e = cache.corners[slot];
                        for j in 0..feats {
                            let g = row[l * feats + j];
                            if g != 0.0 {
                                grad.add(e, j, w * g);
                            }
                        }
                    }
                }
            }
        }

        if !want_input {
            return None;
        }
        let mut d_in = Array2::<f64>::zeros((n, dims));
        for i in 0..n {
            let row = d_out.row(i);
            for (l, level) in self.levels.iter().enumerate() {
                let scale = level.resolution as f64 * 0.5;
                let f = &cache.frac[(i * n_levels + l) * dims..(i * n_levels + l + 1) * dims];
                for k in 0..n_corners {
                    let slot = (i * n_levels + l) * n_corners + k;
                    let base = cache.corners[slot] as usize * feats;
                    let mut dot = 0.0;
                    for j in 0..feats {
                        dot += self.params[base + j] * row[l * feats + j];
                    }
                    if dot == 0.0 {
                        continue;
                    }
                    for dd in 0..dims {
                        if cache.clamped[i * dims + dd] {
                            continue;
                        }
                        let mut dw = 1.0;
                        for d in 0..dims {
                            let bit = (k >> d) & 1;
                            dw *= if d == dd {
                                if bit == 1 {
                                    1.0
                                } else {
                                    -1.0
                                }
                            } else if bit == 1 {
                                f[d]
                            } else {
                                1.0 - f[d]
                            };
                        }
                        d_in[[i, dd]] += dw * scale * dot;
                    }
                }
            }
        }
        Some(d_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(levels: usize, log2: u32) -> HashGridConfig {
        HashGridConfig {
            n_levels: levels,
            features_per_level: 2,
            log2_table_size: log2,
            base_resolution: 2,
            per_level_scale: 2.0,
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = small(2, 4);
        c.per_level_scale = 1.0;
        assert!(c.validate().is_err());
        c = small(0, 4);
        assert!(c.validate().is_err());
    }

    #[test]
    fn dense_levels_until_table_overflows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = HashGrid::new(small(4, 5), 2, &mut rng).unwrap();
        // resolutions 2,4,8,16 -> vertices 9, 25, 81, 289 ; table 32
        assert_eq!(g.level_resolutions(), vec![2, 4, 8, 16]);
        let dense: Vec<bool> = g.levels.iter().map(|l| l.dense).collect();
        assert_eq!(dense, vec![true, true, false, false]);
        assert_eq!(g.n_entries(), 9 + 25 + 32 + 32);
    }

    #[test]
    fn interpolates_vertex_values_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = HashGrid::new(small(1, 8), 2, &mut rng).unwrap();
        // features = (vertex x, vertex y), linear function reproduced exactly
        for vy in 0..3 {
            for vx in 0..3 {
                let e = g.entry_index(&g.levels[0].clone(), &[vx, vy, 0]) as usize;
                g.params[e * 2] = vx as f64;
                g.params[e * 2 + 1] = vy as f64;
            }
        }
        let pts = array![[-1.0, -1.0], [0.0, 0.5], [0.3, -0.2]];
        let (out, _) = g.forward(pts.view());
        for i in 0..3 {
            assert!((out[[i, 0]] - (pts[[i, 0]] + 1.0)).abs() < 1e-12);
            assert!((out[[i, 1]] - (pts[[i, 1]] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = HashGrid::new(small(3, 6), 3, &mut rng).unwrap();
        for p in g.params.iter_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        let pts = array![[0.13, -0.41, 0.77], [-0.62, 0.05, -0.33]];
        let w = Array2::from_shape_fn((2, g.output_dims()), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin());
        let loss = |g: &HashGrid, p: ArrayView2<f64>| -> f64 { (&g.forward(p).0 * &w).sum() };
        let (_, cache) = g.forward(pts.view());
        let mut grad = g.new_grad();
        let d_in = g.backward(&cache, w.view(), Some(&mut grad), true).unwrap();
        let h = 1e-6;
        for &e in grad.touched().iter().take(20) {
            for f in 0..2 {
                let k = e as usize * 2 + f;
                let orig = g.params[k];
                g.params[k] = orig + h;
                let lp = loss(&g, pts.view());
                g.params[k] = orig - h;
                let lm = loss(&g, pts.view());
                g.params[k] = orig;
                assert!((((lp - lm) / (2.0 * h)) - grad.values[k]).abs() < 1e-6);
            }
        }
        for i in 0..2 {
            for d in 0..3 {
                let mut pp = pts.clone();
                pp[[i, d]] += h;
                let lp = loss(&g, pp.view());
                pp[[i, d]] -= 2.0 * h;
                let lm = loss(&g, pp.view());
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - d_in[[i, d]]).abs() < 1e-5 * fd.abs().max(1.0), "{fd} vs {}", d_in[[i, d]]);
            }
        }
        grad.clear();
        assert!(grad.touched().is_empty());
        assert!(grad.as_dense().iter().all(|&v| v == 0.0));
    }
}
