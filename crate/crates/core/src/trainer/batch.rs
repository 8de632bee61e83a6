use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::flow_graph::{CorrPair, CorrespondenceSets};
use crate::media_io::{RoiSpec, VideoClip, VideoGeometry};

/// Expected fraction of a uniform pixel sample that falls in each sample set.
/// A term's mean over its set is multiplied by the set's share, so the batch
/// objective estimates the summed loss divided by the batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetShares {
    pub roi: f64,
    pub non_roi: f64,
    pub ref_pairs: f64,
    pub adj_pairs: f64,
}

impl Default for SetShares {
    /// Plain per-set means.
    fn default() -> Self {
        Self {
            roi: 1.0,
            non_roi: 1.0,
            ref_pairs: 1.0,
            adj_pairs: 1.0,
        }
    }
}

/// One optimization batch. `roi` and `non_roi` index into `points`; all of
/// their samples lie on the reference frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub roi: Range<usize>,
    pub non_roi: Range<usize>,
    pub ref_pairs: Vec<([f64; 3], [f64; 3])>,
    pub adj_pairs: Vec<([f64; 3], [f64; 3])>,
    pub shares: SetShares,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// How a batch of `batch_size` is split between its sample sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchLayout {
    pub uniform: usize,
    pub roi: usize,
    pub non_roi: usize,
    pub ref_pairs: usize,
    pub adj_pairs: usize,
}

impl BatchLayout {
    /// A quarter of the pixel samples comes from the reference frame, split
    /// evenly between inside and outside the ROI; each pair set gets a
    /// quarter of `batch_size` pairs.
    pub fn for_batch(batch_size: usize) -> Self {
        let q = batch_size / 8;
        Self {
            uniform: batch_size - 2 * q,
            roi: q,
            non_roi: q,
            ref_pairs: batch_size / 4,
            adj_pairs: batch_size / 4,
        }
    }
}

/// Draws batches uniformly at random from the clip, the ROI split of the
/// reference frame and the correspondence sets.
pub struct BatchSampler<'a> {
    clip: &'a VideoClip,
    geometry: VideoGeometry,
    ref_frame: usize,
    inside: Vec<(usize, usize)>,
    outside: Vec<(usize, usize)>,
    corr: &'a CorrespondenceSets,
    layout: BatchLayout,
    shares: SetShares,
}

impl<'a> BatchSampler<'a> {
    pub fn new(clip: &'a VideoClip, roi: &RoiSpec, corr: &'a CorrespondenceSets, batch_size: usize) -> Self {
        let geometry = clip.geometry();
        let total = geometry.total_pixels() as f64;
        let inside = roi.inside();
        let outside = roi.outside();
        let shares = SetShares {
            roi: inside.len() as f64 / total,
            non_roi: outside.len() as f64 / total,
            ref_pairs: corr.reference.len() as f64 / total,
            adj_pairs: corr.adjacent.len() as f64 / total,
        };
        Self {
            clip,
            geometry,
            ref_frame: roi.ref_frame,
            inside,
            outside,
            corr,
            layout: BatchLayout::for_batch(batch_size),
            shares,
        }
    }

    fn pixel(&self, x: usize, y: usize, t: usize, batch: &mut SampleBatch) {
        let c = self.geometry.normalize_subpixel(x as f64, y as f64, t);
        batch.points.push([c.x, c.y, c.t]);
        batch.colors.push(self.clip.pixel(x, y, t));
    }

    fn pairs(&self, src: &[CorrPair], n: usize, rng: &mut ChaCha8Rng) -> Vec<([f64; 3], [f64; 3])> {
        if src.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let p = &src[rng.random_range(0..src.len())];
                (p.src_point(&self.geometry), p.dst_point(&self.geometry))
            })
            .collect()
    }

    pub fn shares(&self) -> SetShares {
        self.shares
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> SampleBatch {
        let g = self.geometry;
        let l = self.layout;
        let mut b = SampleBatch {
            shares: self.shares,
            ..SampleBatch::default()
        };
        for _ in 0..l.uniform {
            let t = rng.random_range(0..g.n_frames);
            let x = rng.random_range(0..g.width);
            let y = rng.random_range(0..g.height);
            self.pixel(x, y, t, &mut b);
        }
        let start = b.points.len();
        if !self.inside.is_empty() {
            for _ in 0..l.roi {
                let (x, y) = self.inside[rng.random_range(0..self.inside.len())];
                self.pixel(x, y, self.ref_frame, &mut b);
            }
        }
        b.roi = start..b.points.len();
        let start = b.points.len();
        if !self.outside.is_empty() {
            for _ in 0..l.non_roi {
                let (x, y) = self.outside[rng.random_range(0..self.outside.len())];
                self.pixel(x, y, self.ref_frame, &mut b);
            }
        }
        b.non_roi = start..b.points.len();
        b.ref_pairs = self.pairs(&self.corr.reference, l.ref_pairs, rng);
        b.adj_pairs = self.pairs(&self.corr.adjacent, l.adj_pairs, rng);
        b
    }
}
