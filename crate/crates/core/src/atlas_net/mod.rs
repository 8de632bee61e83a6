//! The four coordinate networks and the ROI reconstruction model.
//!
//! * `M(x,y,t) -> [0,1]`: ROI membership / visibility, hash-encoded.
//! * `A(u,v) -> [0,1]^3`: atlas color, hash-encoded.
//! * `T(x,y,t) -> [-1,1]^2`: frame-to-atlas mapping, raw coordinates.
//! * `L(u,v,t) -> (0,inf)^3`: per-channel illumination scale, raw coordinates.
//!
//! A pixel is reconstructed as `M * L ⊙ A(T) + (1 - M) * c`.

mod checkpoint;
mod field;
mod hash_grid;
mod mlp;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use field::{FieldCache, FieldGrads, FieldNet, OutputActivation};
pub use hash_grid::{HashCache, HashGrid, HashGridConfig, SparseGrad};
pub use mlp::{Linear, Mlp, MlpCache, MlpGrads};

use crate::error::{Result, RnaError};
use crate::media_io::{AtlasImage, VideoGeometry};

const INFER_CHUNK: usize = 8192;

/// Widths and encodings of the four networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hash: HashGridConfig,
    /// Linear layers per MLP, output layer included.
    pub n_layers: usize,
    pub mask_width: usize,
    pub atlas_width: usize,
    pub mapping_width: usize,
    pub illum_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hash: HashGridConfig::default(),
            n_layers: 4,
            mask_width: 32,
            atlas_width: 64,
            mapping_width: 256,
            illum_width: 64,
        }
    }
}

impl NetworkConfig {
    /// Reduced widths and tables for CPU-sized clips of roughly 100x100 pixels.
    pub fn desk() -> Self {
        Self {
            hash: HashGridConfig {
                n_levels: 12,
                features_per_level: 2,
                log2_table_size: 14,
                base_resolution: 8,
                per_level_scale: 1.45,
            },
            n_layers: 4,
            mask_width: 32,
            atlas_width: 64,
            mapping_width: 64,
            illum_width: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hash.validate()?;
        if self.n_layers == 0 {
            return Err(RnaError::contract("networks need at least one layer"));
        }
        for (name, w) in [
            ("mask", self.mask_width),
            ("atlas", self.atlas_width),
            ("mapping", self.mapping_width),
            ("illumination", self.illum_width),
        ] {
            if w == 0 {
                return Err(RnaError::contract(format!("{name} network width must be positive")));
            }
        }
        Ok(())
    }
}

/// Which of the four networks a parameter or gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkId {
    Mask,
    Atlas,
    Mapping,
    Illumination,
}

impl NetworkId {
    pub const ALL: [NetworkId; 4] = [
        NetworkId::Mask,
        NetworkId::Atlas,
        NetworkId::Mapping,
        NetworkId::Illumination,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtlasNetworks {
    pub mask: FieldNet,
    pub atlas: FieldNet,
    pub mapping: FieldNet,
    pub illum: FieldNet,
    pub config: NetworkConfig,
    pub geometry: VideoGeometry,
}

/// Gradient buffers for all four networks.
#[derive(Debug, Clone)]
pub struct AtlasGrads {
    pub mask: FieldGrads,
    pub atlas: FieldGrads,
    pub mapping: FieldGrads,
    pub illum: FieldGrads,
}

impl AtlasGrads {
    pub fn get(&self, id: NetworkId) -> &FieldGrads {
        match id {
            NetworkId::Mask => &self.mask,
            NetworkId::Atlas => &self.atlas,
            NetworkId::Mapping => &self.mapping,
            NetworkId::Illumination => &self.illum,
        }
    }

    pub fn get_mut(&mut self, id: NetworkId) -> &mut FieldGrads {
        match id {
            NetworkId::Mask => &mut self.mask,
            NetworkId::Atlas => &mut self.atlas,
            NetworkId::Mapping => &mut self.mapping,
            NetworkId::Illumination => &mut self.illum,
        }
    }

    pub fn zero(&mut self) {
        for id in NetworkId::ALL {
            self.get_mut(id).zero();
        }
    }
}

/// Network outputs for a batch, together with the reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSample {
    pub uv: Vec<[f64; 2]>,
    pub mask: Vec<f64>,
    pub atlas_rgb: Vec<[f64; 3]>,
    pub illum: Vec<[f64; 3]>,
    pub recon: Vec<[f64; 3]>,
}

/// `m * l ⊙ a + (1 - m) * c`, channelwise.
#[inline]
pub fn compose_recon(mask: f64, illum: [f64; 3], atlas: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = mask * illum[k] * atlas[k] + (1.0 - mask) * c[k];
    }
    out
}

/// Finite-difference Jacobian of `T` from samples at `p`, `p + δx` and `p + δy`,
/// rescaled to pixel units on both sides so that a pixel-preserving map gives `I`.
/// Rows index `(u, v)`, columns the `(x, y)` offsets.
pub fn jacobian_from_samples(
    t_p: [f64; 2],
    t_px: [f64; 2],
    t_py: [f64; 2],
    geometry: &VideoGeometry,
    delta_px: f64,
) -> [[f64; 2]; 2] {
    let (sx, sy) = geometry.pixel_step();
    let row = [1.0 / (sx * delta_px), 1.0 / (sy * delta_px)];
    [
        [(t_px[0] - t_p[0]) * row[0], (t_py[0] - t_p[0]) * row[0]],
        [(t_px[1] - t_p[1]) * row[1], (t_py[1] - t_p[1]) * row[1]],
    ]
}

fn check_finite<const N: usize>(what: &str, rows: &[[f64; N]]) -> Result<()> {
    if rows.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RnaError::contract(format!("non-finite {what} input")))
    }
}

pub(crate) fn to_array<const N: usize>(rows: &[[f64; N]]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), N), |(i, j)| rows[i][j])
}

fn from_array<const N: usize>(a: ArrayView2<f64>) -> Vec<[f64; N]> {
    a.rows()
        .into_iter()
        .map(|r| std::array::from_fn(|j| r[j]))
        .collect()
}

fn infer_chunked<const I: usize, const O: usize>(net: &FieldNet, rows: &[[f64; I]]) -> Vec<[f64; O]> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(INFER_CHUNK) {
        let y = net.infer(to_array(chunk).view());
        out.extend(from_array::<O>(y.view()));
    }
    out
}

impl AtlasNetworks {
    pub fn new(config: NetworkConfig, geometry: VideoGeometry, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = config.n_layers;
        let mask = FieldNet::new(3, Some(config.hash), config.mask_width, l, 1, OutputActivation::UnitTanh, &mut rng)?;
        let atlas = FieldNet::new(2, Some(config.hash), config.atlas_width, l, 3, OutputActivation::UnitTanh, &mut rng)?;
        let mapping = FieldNet::new(3, None, config.mapping_width, l, 2, OutputActivation::Tanh, &mut rng)?;
        let illum = FieldNet::new(3, None, config.illum_width, l, 3, OutputActivation::Softplus, &mut rng)?;
        Ok(Self {
            mask,
            atlas,
            mapping,
            illum,
            config,
            geometry,
        })
    }

    pub fn get(&self, id: NetworkId) -> &FieldNet {
        match id {
            NetworkId::Mask => &self.mask,
            NetworkId::Atlas => &self.atlas,
            NetworkId::Mapping => &self.mapping,
            NetworkId::Illumination => &self.illum,
        }
    }

    pub fn get_mut(&mut self, id: NetworkId) -> &mut FieldNet {
        match id {
            NetworkId::Mask => &mut self.mask,
            NetworkId::Atlas => &mut self.atlas,
            NetworkId::Mapping => &mut self.mapping,
            NetworkId::Illumination => &mut self.illum,
        }
    }

    pub fn new_grads(&self) -> AtlasGrads {
        AtlasGrads {
            mask: self.mask.new_grads(),
            atlas: self.atlas.new_grads(),
            mapping: self.mapping.new_grads(),
            illum: self.illum.new_grads(),
        }
    }

    pub fn param_count(&self) -> usize {
        NetworkId::ALL.iter().map(|&id| self.get(id).param_count()).sum()
    }

    /// `T(p)` for normalized `(x, y, t)` points.
    pub fn eval_mapping(&self, points: &[[f64; 3]]) -> Result<Vec<[f64; 2]>> {
        check_finite("mapping", points)?;
        Ok(infer_chunked(&self.mapping, points))
    }

    /// `M(p)` for normalized `(x, y, t)` points.
    pub fn eval_mask(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        check_finite("mask", points)?;
        Ok(infer_chunked::<3, 1>(&self.mask, points)
            .into_iter()
            .map(|v| v[0])
            .collect())
    }

    /// `A(uv)`.
    pub fn eval_atlas(&self, uv: &[[f64; 2]]) -> Result<Vec<[f64; 3]>> {
        check_finite("atlas", uv)?;
        Ok(infer_chunked(&self.atlas, uv))
    }

    /// Diagonal of `L(uv, t)`.
    pub fn eval_illum(&self, uv: &[[f64; 2]], t: &[f64]) -> Result<Vec<[f64; 3]>> {
        if uv.len() != t.len() {
            return Err(RnaError::contract(format!(
                "{} uv rows but {} times",
                uv.len(),
                t.len()
            )));
        }
        check_finite("illumination", uv)?;
        let rows: Vec<[f64; 3]> = uv.iter().zip(t).map(|(q, &t)| [q[0], q[1], t]).collect();
        check_finite("illumination", &rows)?;
        Ok(infer_chunked(&self.illum, &rows))
    }

    /// Evaluates every network at `points` and reconstructs with colors `c`.
    pub fn forward_model(&self, points: &[[f64; 3]], colors: &[[f64; 3]]) -> Result<ForwardSample> {
        if points.len() != colors.len() {
            return Err(RnaError::contract(format!(
                "{} points but {} colors",
                points.len(),
                colors.len()
            )));
        }
        let uv = self.eval_mapping(points)?;
        let mask = self.eval_mask(points)?;
        let atlas_rgb = self.eval_atlas(&uv)?;
        let t: Vec<f64> = points.iter().map(|p| p[2]).collect();
        let illum = self.eval_illum(&uv, &t)?;
        let recon = (0..points.len())
            .map(|i| compose_recon(mask[i], illum[i], atlas_rgb[i], colors[i]))
            .collect();
        Ok(ForwardSample {
            uv,
            mask,
            atlas_rgb,
            illum,
            recon,
        })
    }

    /// Normalized points offset by `delta_px` pixels along x and along y.
    pub fn offset_points(&self, points: &[[f64; 3]], delta_px: f64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let (sx, sy) = self.geometry.pixel_step();
        let px = points.iter().map(|p| [p[0] + sx * delta_px, p[1], p[2]]).collect();
        let py = points.iter().map(|p| [p[0], p[1] + sy * delta_px, p[2]]).collect();
        (px, py)
    }

    /// Pixel-scaled finite-difference Jacobians of `T`.
    pub fn jacobian_t(&self, points: &[[f64; 3]], delta_px: f64) -> Result<Vec<[[f64; 2]; 2]>> {
        let (px, py) = self.offset_points(points, delta_px);
        let t0 = self.eval_mapping(points)?;
        let tx = self.eval_mapping(&px)?;
        let ty = self.eval_mapping(&py)?;
        Ok((0..points.len())
            .map(|i| jacobian_from_samples(t0[i], tx[i], ty[i], &self.geometry, delta_px))
            .collect())
    }

    /// Renders `A` at the cell centers of a `resolution x resolution` raster over `[-1,1]^2`.
    pub fn render_atlas(&self, resolution: usize) -> Result<AtlasImage> {
        if resolution == 0 {
            return Err(RnaError::contract("atlas resolution must be positive"));
        }
        let mut img = AtlasImage::new(resolution);
        for j in 0..resolution {
            let row: Vec<[f64; 2]> = (0..resolution)
                .map(|i| {
                    let (u, v) = img.cell_center(i, j);
                    [u, v]
                })
                .collect();
            let rgb = self.eval_atlas(&row)?;
            for (i, c) in rgb.into_iter().enumerate() {
                img.set(i, j, c);
            }
        }
        Ok(img)
    }

    pub fn flat_params(&self, id: NetworkId) -> Vec<f64> {
        self.get(id).flat_params()
    }
}
