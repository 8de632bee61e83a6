//! Mask bootstrapping and joint optimization of the four networks.

mod adam;
mod batch;
pub mod losses;
mod objective;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{clip_per_network, Adam, AdamConfig};
pub use batch::{BatchLayout, BatchSampler, SampleBatch, SetShares};
pub use objective::{bootstrap_bce, bootstrap_identity, evaluate, LossTerms, JACOBIAN_DELTA_PX};

use crate::atlas_net::{AtlasNetworks, NetworkId};
use crate::error::{Result, RnaError};
use crate::flow_graph::CorrespondenceSets;
use crate::media_io::{BinaryMask, RoiSpec, VideoClip};
use crate::metrics::roi_psnr;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rigid: f64,
    pub pos: f64,
    /// Pairs to the reference frame.
    pub corr_ref: f64,
    /// Pairs to adjacent frames.
    pub corr_adj: f64,
    pub mask_bce: f64,
    pub mask_ref: f64,
    pub mask_adj: f64,
    pub illum: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rigid: 0.002,
            pos: 0.6,
            corr_ref: 0.02,
            corr_adj: 0.1,
            mask_bce: 0.4,
            mask_ref: 0.6,
            mask_adj: 0.4,
            illum: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rigid,
            self.pos,
            self.corr_ref,
            self.corr_adj,
            self.mask_bce,
            self.mask_ref,
            self.mask_adj,
            self.illum,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(RnaError::contract("loss weights must be finite and non-negative"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub bootstrap_iters: usize,
    pub main_iters: usize,
    pub batch_size: usize,
    pub lr_mlp: f64,
    pub lr_hash: f64,
    /// Learning-rate multiplier reached at the last main iteration; the
    /// rates decay exponentially towards it.
    pub lr_final_ratio: f64,
    pub seed: u64,
    pub log_every: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub grad_clip: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            bootstrap_iters: 10_000,
            main_iters: 60_000,
            batch_size: 10_000,
            lr_mlp: 0.0005,
            lr_hash: 0.05,
            lr_final_ratio: 0.1,
            seed: 0,
            log_every: 1000,
            checkpoint_every: 0,
            grad_clip: 10.0,
        }
    }
}

impl TrainSchedule {
    /// Iteration counts and batch size for CPU runs on ~100x100 clips.
    pub fn desk() -> Self {
        Self {
            bootstrap_iters: 5_000,
            main_iters: 20_000,
            batch_size: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 8 {
            return Err(RnaError::contract("batch size must be at least 8"));
        }
        if self.log_every == 0 {
            return Err(RnaError::contract("log interval must be positive"));
        }
        for (name, v) in [("lr_mlp", self.lr_mlp), ("lr_hash", self.lr_hash), ("grad_clip", self.grad_clip)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(RnaError::contract(format!("{name} must be positive")));
            }
        }
        check_final_ratio(self.lr_final_ratio)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr_mlp, self.lr_hash)
    }
}

pub(crate) fn check_final_ratio(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(RnaError::contract(format!("final learning-rate ratio must be in (0, 1], got {r}")))
    }
}

/// Learning-rate multiplier for step `iter` (1-based) of `total`.
pub fn lr_decay(final_ratio: f64, iter: usize, total: usize) -> f64 {
    final_ratio.powf((iter - 1) as f64 / total.saturating_sub(1).max(1) as f64)
}

/// One line of the metrics log. Loss values are means over the iterations
/// since the previous record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    pub l_recon: f64,
    pub l_rigid: f64,
    pub l_pos: f64,
    pub l_corr: f64,
    pub l_mask: f64,
    pub l_illum: f64,
    pub psnr_roi: f64,
}

/// Receives metrics and periodic checkpoints during training.
pub trait TrainSink {
    fn metrics(&mut self, _record: &MetricRecord) -> Result<()> {
        Ok(())
    }
    fn checkpoint(&mut self, _iter: usize, _nets: &AtlasNetworks) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl TrainSink for NullSink {}

const BOOTSTRAP_STREAM: u64 = 0x6b6f_6f74;
const MAIN_STREAM: u64 = 0x6d61_696e;

/// Fits `M` to per-frame binary masks with cross-entropy and pulls `T` toward
/// the identity map on every frame. Only `M` and `T` change.
/// Returns the cross-entropy of the final iteration.
pub fn bootstrap(nets: &mut AtlasNetworks, masks: &[BinaryMask], schedule: &TrainSchedule) -> Result<f64> {
    schedule.validate()?;
    let g = nets.geometry;
    if masks.len() != g.n_frames {
        return Err(RnaError::contract(format!(
            "{} bootstrap masks for {} frames",
            masks.len(),
            g.n_frames
        )));
    }
    if let Some(m) = masks.iter().find(|m| m.width != g.width || m.height != g.height) {
        return Err(RnaError::contract(format!(
            "bootstrap mask is {}x{}, video is {}x{}",
            m.width, m.height, g.width, g.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ BOOTSTRAP_STREAM);
    let mut adam = Adam::new(nets, schedule.adam());
    let mut grads = nets.new_grads();
    let which = [NetworkId::Mask, NetworkId::Mapping];
    let mut last = 0.0;
    let mut points = Vec::with_capacity(schedule.batch_size);
    let mut targets = Vec::with_capacity(schedule.batch_size);
    for iter in 0..schedule.bootstrap_iters {
        points.clear();
        targets.clear();
        for _ in 0..schedule.batch_size {
            let t = rng.random_range(0..g.n_frames);
            let x = rng.random_range(0..g.width);
            let y = rng.random_range(0..g.height);
            let c = g.normalize_subpixel(x as f64, y as f64, t);
            points.push([c.x, c.y, c.t]);
            targets.push(if masks[t].get(x, y) { 1.0 } else { 0.0 });
        }
        grads.zero();
        last = bootstrap_bce(nets, &points, &targets, Some(&mut grads))?;
        let ident = bootstrap_identity(nets, &points, Some(&mut grads));
        if !last.is_finite() || !ident.is_finite() {
            return Err(RnaError::NonFinite { term: "bootstrap".into(), iter });
        }
        check_grads(&grads, &which, iter)?;
        clip_per_network(&mut grads, &which, schedule.grad_clip);
        adam.step(nets, &grads, &which);
    }
    Ok(last)
}

fn check_grads(grads: &crate::atlas_net::AtlasGrads, which: &[NetworkId], iter: usize) -> Result<()> {
    if which.iter().all(|&id| grads.get(id).all_finite()) {
        Ok(())
    } else {
        Err(RnaError::NonFinite { term: "gradient".into(), iter })
    }
}

/// Joint optimization of all networks on the full objective.
pub fn train(
    nets: &mut AtlasNetworks,
    clip: &VideoClip,
    roi: &RoiSpec,
    corr: &CorrespondenceSets,
    weights: &LossWeights,
    schedule: &TrainSchedule,
    sink: &mut dyn TrainSink,
) -> Result<Vec<MetricRecord>> {
    schedule.validate()?;
    weights.validate()?;
    if clip.geometry() != nets.geometry {
        return Err(RnaError::contract("networks were built for a different video size"));
    }
    let sampler = BatchSampler::new(clip, roi, corr, schedule.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ MAIN_STREAM);
    let mut adam = Adam::new(nets, schedule.adam());
    let mut grads = nets.new_grads();
    let which = NetworkId::ALL;
    let mut records = Vec::new();
    let mut acc = LossTerms::default();
    let mut acc_n = 0usize;
    for iter in 1..=schedule.main_iters {
        let batch = sampler.sample(&mut rng);
        adam.set_lr_scale(lr_decay(schedule.lr_final_ratio, iter, schedule.main_iters));
        grads.zero();
        let terms = evaluate(nets, &batch, weights, Some(&mut grads))?;
        terms.check_finite(iter)?;
        check_grads(&grads, &which, iter)?;
        clip_per_network(&mut grads, &which, schedule.grad_clip);
        adam.step(nets, &grads, &which);
        acc.add_scaled(&terms, 1.0);
        acc_n += 1;
        if iter % schedule.log_every == 0 || iter == schedule.main_iters {
            let k = 1.0 / acc_n as f64;
            let rec = MetricRecord {
                iter,
                l_recon: acc.recon * k,
                l_rigid: acc.rigid * k,
                l_pos: acc.pos * k,
                l_corr: acc.corr * k,
                l_mask: acc.mask * k,
                l_illum: acc.illum * k,
                psnr_roi: roi_psnr(nets, clip, roi)?,
            };
            log::info!(
                "iter {iter}: loss {:.5} roi psnr {:.2} dB",
                acc.total() * k,
                rec.psnr_roi
            );
            sink.metrics(&rec)?;
            records.push(rec);
            acc = LossTerms::default();
            acc_n = 0;
        }
        if schedule.checkpoint_every > 0 && iter % schedule.checkpoint_every == 0 {
            sink.checkpoint(iter, nets)?;
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests;
