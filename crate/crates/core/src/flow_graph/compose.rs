use std::collections::HashMap;

use crate::error::{Result, RnaError};
use crate::media_io::FlowField;

use super::descriptor::AppearanceDescriptor;
use super::filters::{appearance_filter, cycle_filter};
use super::provider::FlowProvider;

pub const DEFAULT_WINDOW: usize = 7;

/// Thresholds applied to every raw hop before it is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowFilters {
    pub cycle_threshold_px: f64,
    /// `None` disables the appearance test.
    pub appearance_threshold: Option<f64>,
}

impl Default for FlowFilters {
    fn default() -> Self {
        Self {
            cycle_threshold_px: 5.0,
            appearance_threshold: Some(0.5),
        }
    }
}

/// Lazily fetches raw flows for a frame pair and keeps the filtered result
/// for both directions.
pub struct HopCache<'a> {
    provider: &'a dyn FlowProvider,
    descriptors: Option<&'a dyn AppearanceDescriptor>,
    filters: FlowFilters,
    hops: HashMap<(usize, usize), FlowField>,
}

impl<'a> HopCache<'a> {
    pub fn new(
        provider: &'a dyn FlowProvider,
        descriptors: Option<&'a dyn AppearanceDescriptor>,
        filters: FlowFilters,
    ) -> Self {
        Self {
            provider,
            descriptors,
            filters,
            hops: HashMap::new(),
        }
    }

    pub fn filters(&self) -> FlowFilters {
        self.filters
    }

    /// Filtered flow `f_{src -> dst}`.
    pub fn hop(&mut self, src: usize, dst: usize) -> Result<&FlowField> {
        if !self.hops.contains_key(&(src, dst)) {
            let raw_f = self.provider.flow(src, dst)?;
            let raw_b = self.provider.flow(dst, src)?;
            if !raw_f.same_shape(&raw_b) {
                return Err(RnaError::contract(format!(
                    "flows {src}->{dst} and {dst}->{src} differ in size"
                )));
            }
            let thr = self.filters.cycle_threshold_px;
            let mut fwd = cycle_filter(&raw_f, &raw_b, thr)?;
            let mut bwd = cycle_filter(&raw_b, &raw_f, thr)?;
            if let (Some(a), Some(desc)) = (self.filters.appearance_threshold, self.descriptors) {
                let ds = desc.describe(src)?;
                let dd = desc.describe(dst)?;
                fwd = appearance_filter(&fwd, &ds, &dd, a)?;
                bwd = appearance_filter(&bwd, &dd, &ds, a)?;
            }
            fwd.src_frame = src;
            fwd.dst_frame = dst;
            bwd.src_frame = dst;
            bwd.dst_frame = src;
            self.hops.insert((src, dst), fwd);
            self.hops.insert((dst, src), bwd);
        }
        Ok(&self.hops[&(src, dst)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainDirection {
    /// `flows[t]` is `F_{t -> r}` on frame t's pixel grid.
    ToReference,
    /// `flows[t]` is `F_{r -> t}` on the reference frame's pixel grid.
    FromReference,
}

/// Composed flow between every frame and the reference frame.
#[derive(Debug, Clone)]
pub struct RefFlowSet {
    pub ref_frame: usize,
    pub direction: ChainDirection,
    pub flows: Vec<FlowField>,
}

impl RefFlowSet {
    pub fn n_frames(&self) -> usize {
        self.flows.len()
    }

    pub fn flow(&self, t: usize) -> &FlowField {
        &self.flows[t]
    }
}

/// Frames sorted by distance from the reference, earlier frames first on ties.
pub fn processing_order(n_frames: usize, ref_frame: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_frames).collect();
    order.sort_by_key(|&t| (t.abs_diff(ref_frame), t));
    order
}

/// Up to `window` frames between t and r (r included), nearest to t first.
pub fn neighborhood(t: usize, ref_frame: usize, window: usize) -> Vec<usize> {
    let d = t.abs_diff(ref_frame);
    (1..=d.min(window))
        .map(|k| if t > ref_frame { t - k } else { t + k })
        .collect()
}

fn check_args(n_frames: usize, ref_frame: usize, window: usize) -> Result<()> {
    if ref_frame >= n_frames {
        return Err(RnaError::Bounds {
            what: "reference frame",
            index: ref_frame,
            size: n_frames,
        });
    }
    if window == 0 {
        return Err(RnaError::contract("composition window must be at least 1"));
    }
    Ok(())
}

/// Builds `F_{t -> r}` for every frame by averaging filtered hops
/// `f_{t -> t'}` composed with the already-built `F_{t' -> r}`.
pub fn compose_to_reference(
    hops: &mut HopCache,
    n_frames: usize,
    width: usize,
    height: usize,
    ref_frame: usize,
    window: usize,
) -> Result<RefFlowSet> {
    check_args(n_frames, ref_frame, window)?;
    let mut flows: Vec<Option<FlowField>> = vec![None; n_frames];
    flows[ref_frame] = Some(FlowField::zeros(width, height, ref_frame, ref_frame));
    for t in processing_order(n_frames, ref_frame).into_iter().skip(1) {
        let mut sum = vec![(0.0f64, 0.0f64, 0u32); width * height];
        for tp in neighborhood(t, ref_frame, window) {
            let hop = hops.hop(t, tp)?;
            let chain = flows[tp].as_ref().expect("processed in distance order");
            for y in 0..height {
                for x in 0..width {
                    let Some((hu, hv)) = hop.get(x, y) else { continue };
                    let Some((cu, cv)) = chain.sample(x as f64 + hu, y as f64 + hv) else {
                        continue;
                    };
                    let s = &mut sum[y * width + x];
                    s.0 += hu + cu;
                    s.1 += hv + cv;
                    s.2 += 1;
                }
            }
        }
        flows[t] = Some(FlowField::from_fn(width, height, t, ref_frame, |x, y| {
            let (su, sv, n) = sum[y * width + x];
            (n > 0).then(|| (su / n as f64, sv / n as f64))
        }));
    }
    Ok(RefFlowSet {
        ref_frame,
        direction: ChainDirection::ToReference,
        flows: flows.into_iter().map(|f| f.unwrap()).collect(),
    })
}

/// Builds `F_{r -> t}` for every frame: for reference pixel p and each
/// neighbor t', follow `F_{r -> t'}` then the filtered hop `f_{t' -> t}`.
pub fn compose_from_reference(
    hops: &mut HopCache,
    n_frames: usize,
    width: usize,
    height: usize,
    ref_frame: usize,
    window: usize,
) -> Result<RefFlowSet> {
    check_args(n_frames, ref_frame, window)?;
    let mut flows: Vec<Option<FlowField>> = vec![None; n_frames];
    flows[ref_frame] = Some(FlowField::zeros(width, height, ref_frame, ref_frame));
    for t in processing_order(n_frames, ref_frame).into_iter().skip(1) {
        let mut sum = vec![(0.0f64, 0.0f64, 0u32); width * height];
        for tp in neighborhood(t, ref_frame, window) {
            let hop = hops.hop(tp, t)?;
            let chain = flows[tp].as_ref().expect("processed in distance order");
            for y in 0..height {
                for x in 0..width {
                    let Some((cu, cv)) = chain.get(x, y) else { continue };
                    let Some((hu, hv)) = hop.sample(x as f64 + cu, y as f64 + cv) else {
                        continue;
                    };
                    let s = &mut sum[y * width + x];
                    s.0 += cu + hu;
                    s.1 += cv + hv;
                    s.2 += 1;
                }
            }
        }
        flows[t] = Some(FlowField::from_fn(width, height, ref_frame, t, |x, y| {
            let (su, sv, n) = sum[y * width + x];
            (n > 0).then(|| (su / n as f64, sv / n as f64))
        }));
    }
    Ok(RefFlowSet {
        ref_frame,
        direction: ChainDirection::FromReference,
        flows: flows.into_iter().map(|f| f.unwrap()).collect(),
    })
}
