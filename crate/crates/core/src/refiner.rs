//! Post-training mask refinement.
//!
//! Pixels whose atlas position falls inside the warped ROI and whose atlas
//! color explains the observed color are taken as visible, and `M` alone is
//! fine-tuned to accept them.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas_net::{to_array, AtlasNetworks, NetworkId};
use crate::error::{Result, RnaError};
use crate::flow_graph::CorrespondenceSets;
use crate::media_io::{nearest_cell, BinaryMask, RoiSpec, VideoClip, VideoGeometry, ATLAS_RESOLUTION};
use crate::morph::close_square;
use crate::trainer::{check_final_ratio, clip_per_network, lr_decay, Adam, AdamConfig};

const REFINE_STREAM: u64 = 0x7266_6e65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    /// L1 color threshold of the visibility test, channels in `[0,1]`.
    pub tau: f64,
    pub lambda_no1: f64,
    pub lambda_no2: f64,
    pub iters: usize,
    pub batch_size: usize,
    pub lr_mlp: f64,
    pub lr_hash: f64,
    /// Learning-rate multiplier reached at the last iteration.
    pub lr_final_ratio: f64,
    pub seed: u64,
    pub log_every: usize,
    pub grad_clip: f64,
    /// Adam's denominator floor.
    pub adam_eps: f64,
    pub atlas_resolution: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            tau: 0.025,
            lambda_no1: 0.01,
            lambda_no2: 0.1,
            iters: 20_000,
            batch_size: 10_000,
            lr_mlp: 5e-4,
            lr_hash: 0.05,
            lr_final_ratio: 0.1,
            seed: 0,
            log_every: 1000,
            grad_clip: 10.0,
            adam_eps: 1e-15,
            atlas_resolution: ATLAS_RESOLUTION,
        }
    }
}

impl RefineParams {
    /// Batch sized for CPU runs on small clips.
    pub fn desk() -> Self {
        Self {
            batch_size: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(RnaError::contract(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda_no1 >= 0.0 && self.lambda_no2 >= 0.0) {
            return Err(RnaError::contract("refinement weights must be non-negative"));
        }
        if self.batch_size < 4 {
            return Err(RnaError::contract("refinement batch needs at least 4 samples"));
        }
        if self.atlas_resolution == 0 || self.log_every == 0 {
            return Err(RnaError::contract("atlas resolution and log interval must be positive"));
        }
        check_final_ratio(self.lr_final_ratio)
    }
}

/// Pixel sets found by the visibility test, with the atlas-space ROI they used.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSets {
    /// Warped ROI, indexed by atlas cell `(i, j)`.
    pub atlas_roi: BinaryMask,
    /// Pixels `(x, y, t)` whose `T(p)` lands in `atlas_roi`.
    pub p_pot: Vec<[u32; 3]>,
    /// Members of `p_pot` passing the color test.
    pub p_no: Vec<[u32; 3]>,
    pub tau: f64,
}

impl CandidateSets {
    fn rasters(set: &[[u32; 3]], g: &VideoGeometry) -> Vec<BinaryMask> {
        let mut out = vec![BinaryMask::new(g.width, g.height); g.n_frames];
        for p in set {
            out[p[2] as usize].set(p[0] as usize, p[1] as usize, true);
        }
        out
    }

    /// Per-frame rasters of `p_pot`, for inspection.
    pub fn pot_masks(&self, g: &VideoGeometry) -> Vec<BinaryMask> {
        Self::rasters(&self.p_pot, g)
    }

    /// Per-frame rasters of `p_no`, for inspection.
    pub fn no_masks(&self, g: &VideoGeometry) -> Vec<BinaryMask> {
        Self::rasters(&self.p_no, g)
    }
}

/// Reference-frame ROI pixels splatted to the atlas cell under `T(p)`.
pub fn splat_roi(roi: &RoiSpec, nets: &AtlasNetworks, resolution: usize) -> Result<BinaryMask> {
    let g = nets.geometry;
    let pts: Vec<[f64; 3]> = roi
        .inside()
        .into_iter()
        .map(|(x, y)| {
            let c = g.normalize_subpixel(x as f64, y as f64, roi.ref_frame);
            [c.x, c.y, c.t]
        })
        .collect();
    let mut out = BinaryMask::new(resolution, resolution);
    for uv in nets.eval_mapping(&pts)? {
        let (i, j) = nearest_cell(resolution, uv[0], uv[1]);
        out.set(i, j, true);
    }
    if pts.len() > 1 && out.count() == 1 {
        return Err(RnaError::contract(
            "mapping is degenerate: every ROI pixel lands in the same atlas cell",
        ));
    }
    Ok(out)
}

/// Closing passes that seal the gaps between splats of adjacent pixels while
/// `T` stretches the frame by up to a factor of two.
pub fn closing_passes(g: &VideoGeometry, resolution: usize) -> u8 {
    let (sx, sy) = g.pixel_step();
    let cells_per_px = sx.max(sy) * resolution as f64 / 2.0;
    cells_per_px.ceil().clamp(2.0, u8::MAX as f64) as u8
}

/// The ROI mask carried into atlas space by `T` on the reference frame.
pub fn warp_roi_to_atlas(roi: &RoiSpec, nets: &AtlasNetworks, resolution: usize) -> Result<BinaryMask> {
    let splat = splat_roi(roi, nets, resolution)?;
    Ok(close_square(&splat, closing_passes(&nets.geometry, resolution)))
}

/// `P_pot` and `P_no` over every pixel of the clip.
pub fn find_candidates(
    clip: &VideoClip,
    nets: &AtlasNetworks,
    atlas_roi: &BinaryMask,
    tau: f64,
) -> Result<CandidateSets> {
    let g = clip.geometry();
    if g != nets.geometry {
        return Err(RnaError::contract("networks were built for a different video size"));
    }
    if atlas_roi.width != atlas_roi.height {
        return Err(RnaError::contract("atlas ROI raster must be square"));
    }
    let res = atlas_roi.width;
    let mut p_pot = Vec::new();
    let mut p_no = Vec::new();
    for t in 0..g.n_frames {
        let mut pts = Vec::with_capacity(g.pixels_per_frame());
        for y in 0..g.height {
            for x in 0..g.width {
                let c = g.normalize_subpixel(x as f64, y as f64, t);
                pts.push([c.x, c.y, c.t]);
            }
        }
        let uv = nets.eval_mapping(&pts)?;
        let inside: Vec<usize> = (0..pts.len())
            .filter(|&k| {
                let (i, j) = nearest_cell(res, uv[k][0], uv[k][1]);
                atlas_roi.get(i, j)
            })
            .collect();
        let sel_uv: Vec<[f64; 2]> = inside.iter().map(|&k| uv[k]).collect();
        let a = nets.eval_atlas(&sel_uv)?;
        let l = nets.eval_illum(&sel_uv, &vec![g.normalized_t(t); sel_uv.len()])?;
        for (n, &k) in inside.iter().enumerate() {
            let (x, y) = (k % g.width, k / g.width);
            let p = [x as u32, y as u32, t as u32];
            p_pot.push(p);
            let c = clip.pixel(x, y, t);
            let l1: f64 = (0..3).map(|ch| (l[n][ch] * a[n][ch] - c[ch]).abs()).sum();
            if l1 < tau {
                p_no.push(p);
            }
        }
    }
    Ok(CandidateSets {
        atlas_roi: atlas_roi.clone(),
        p_pot,
        p_no,
        tau,
    })
}

/// One logged interval of refinement; losses are means over the interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineRecord {
    pub iter: usize,
    pub l_recon: f64,
    pub l_no: f64,
}

/// Samples drawn for one refinement step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineBatch {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub no_points: Vec<[f64; 3]>,
    pub adj_pairs: Vec<([f64; 3], [f64; 3])>,
    /// Fractions of the video covered by `P_no` and by `P_a`.
    pub no_share: f64,
    pub adj_share: f64,
}

/// `(recon, no)` terms of the refinement loss with gradients into `M` only.
pub fn refine_objective(
    nets: &AtlasNetworks,
    batch: &RefineBatch,
    params: &RefineParams,
    grads: Option<&mut crate::atlas_net::AtlasGrads>,
) -> Result<(f64, f64)> {
    let n = batch.points.len();
    let k = batch.no_points.len();
    let a = batch.adj_pairs.len();
    if batch.colors.len() != n {
        return Err(RnaError::contract("refinement colors and points differ in length"));
    }
    let uv = nets.eval_mapping(&batch.points)?;
    let atlas = nets.eval_atlas(&uv)?;
    let t: Vec<f64> = batch.points.iter().map(|p| p[2]).collect();
    let illum = nets.eval_illum(&uv, &t)?;

    let mut rows = batch.points.clone();
    rows.extend_from_slice(&batch.no_points);
    rows.extend(batch.adj_pairs.iter().map(|p| p.0));
    rows.extend(batch.adj_pairs.iter().map(|p| p.1));
    let (out, cache) = nets.mask.forward(to_array(&rows).view());
    let m = |i: usize| out[[i, 0]];
    let mut d = Array2::<f64>::zeros((rows.len(), 1));

    // M * (L A - c) is the residual of the reconstruction.
    let mut recon = 0.0;
    for i in 0..n {
        let e2: f64 = (0..3).map(|c| (illum[i][c] * atlas[i][c] - batch.colors[i][c]).powi(2)).sum();
        recon += m(i) * m(i) * e2;
        d[[i, 0]] = 2.0 * m(i) * e2 / n as f64;
    }
    recon /= n.max(1) as f64;

    let mut no = 0.0;
    if k > 0 {
        let w = params.lambda_no1 * batch.no_share / k as f64;
        for j in 0..k {
            let i = n + j;
            no += w * (1.0 - m(i)).powi(2);
            d[[i, 0]] = -2.0 * w * (1.0 - m(i));
        }
    }
    if a > 0 {
        let w = params.lambda_no2 * batch.adj_share / a as f64;
        for j in 0..a {
            let (s, q) = (n + k + j, n + k + a + j);
            let diff = m(s) - m(q);
            no += w * diff.abs();
            let sg = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            d[[s, 0]] += w * sg;
            d[[q, 0]] -= w * sg;
        }
    }
    if let Some(grads) = grads {
        nets.mask.backward(&cache, d.view(), Some(&mut grads.mask), false);
    }
    Ok((recon, no))
}

struct RefineSampler<'a> {
    clip: &'a VideoClip,
    geometry: VideoGeometry,
    no: &'a [[u32; 3]],
    corr: &'a CorrespondenceSets,
    batch_size: usize,
}

impl RefineSampler<'_> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> RefineBatch {
        let g = self.geometry;
        let total = g.total_pixels() as f64;
        let mut b = RefineBatch {
            no_share: self.no.len() as f64 / total,
            adj_share: self.corr.adjacent.len() as f64 / total,
            ..RefineBatch::default()
        };
        let extra = self.batch_size / 4;
        for _ in 0..self.batch_size {
            let t = rng.random_range(0..g.n_frames);
            let x = rng.random_range(0..g.width);
            let y = rng.random_range(0..g.height);
            let c = g.normalize_subpixel(x as f64, y as f64, t);
            b.points.push([c.x, c.y, c.t]);
            b.colors.push(self.clip.pixel(x, y, t));
        }
        for _ in 0..extra {
            let p = self.no[rng.random_range(0..self.no.len())];
            let c = g.normalize_subpixel(p[0] as f64, p[1] as f64, p[2] as usize);
            b.no_points.push([c.x, c.y, c.t]);
        }
        if !self.corr.adjacent.is_empty() {
            for _ in 0..extra {
                let p = &self.corr.adjacent[rng.random_range(0..self.corr.adjacent.len())];
                b.adj_pairs.push((p.src_point(&g), p.dst_point(&g)));
            }
        }
        b
    }
}

/// Fine-tunes `M` on reconstruction plus the visible-pixel terms. The other
/// networks are never written. An empty `P_no` leaves everything untouched.
pub fn refine(
    nets: &mut AtlasNetworks,
    clip: &VideoClip,
    candidates: &CandidateSets,
    corr: &CorrespondenceSets,
    params: &RefineParams,
    mut on_record: impl FnMut(&RefineRecord) -> Result<()>,
) -> Result<Vec<RefineRecord>> {
    params.validate()?;
    if clip.geometry() != nets.geometry {
        return Err(RnaError::contract("networks were built for a different video size"));
    }
    if candidates.p_no.is_empty() {
        log::warn!("no visible candidates found; skipping mask refinement");
        return Ok(Vec::new());
    }
    let sampler = RefineSampler {
        clip,
        geometry: clip.geometry(),
        no: &candidates.p_no,
        corr,
        batch_size: params.batch_size,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ REFINE_STREAM);
    let mut adam = Adam::new(nets, AdamConfig { eps: params.adam_eps, ..AdamConfig::new(params.lr_mlp, params.lr_hash) });
    let mut grads = nets.new_grads();
    let which = [NetworkId::Mask];
    let mut records = Vec::new();
    let (mut acc_r, mut acc_n, mut count) = (0.0, 0.0, 0usize);
    for iter in 1..=params.iters {
        let batch = sampler.sample(&mut rng);
        adam.set_lr_scale(lr_decay(params.lr_final_ratio, iter, params.iters));
        grads.zero();
        let (r, no) = refine_objective(nets, &batch, params, Some(&mut grads))?;
        if !(r.is_finite() && no.is_finite()) {
            return Err(RnaError::NonFinite { term: "refine".into(), iter });
        }
        if !grads.mask.all_finite() {
            return Err(RnaError::NonFinite { term: "gradient".into(), iter });
        }
        clip_per_network(&mut grads, &which, params.grad_clip);
        adam.step(nets, &grads, &which);
        acc_r += r;
        acc_n += no;
        count += 1;
        if iter % params.log_every == 0 || iter == params.iters {
            let rec = RefineRecord {
                iter,
                l_recon: acc_r / count as f64,
                l_no: acc_n / count as f64,
            };
            log::info!("refine iter {iter}: recon {:.6} no {:.6}", rec.l_recon, rec.l_no);
            on_record(&rec)?;
            records.push(rec);
            (acc_r, acc_n, count) = (0.0, 0.0, 0);
        }
    }
    Ok(records)
}
