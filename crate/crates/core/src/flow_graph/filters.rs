use crate::error::{Result, RnaError};
use crate::media_io::FlowField;

use super::descriptor::DescriptorMap;

/// Forward-backward consistency check. A pixel survives iff its forward flow
/// lands inside the frame and `|f_fwd(p) + f_bwd(p + f_fwd(p))| <= threshold_px`.
pub fn cycle_filter(f_fwd: &FlowField, f_bwd: &FlowField, threshold_px: f64) -> Result<FlowField> {
    if !f_fwd.same_shape(f_bwd) {
        return Err(RnaError::contract(format!(
            "cycle filter on {}x{} and {}x{} flows",
            f_fwd.width, f_fwd.height, f_bwd.width, f_bwd.height
        )));
    }
    let mut out = f_fwd.clone();
    for y in 0..f_fwd.height {
        for x in 0..f_fwd.width {
            let keep = f_fwd.get(x, y).and_then(|(u, v)| {
                let (bu, bv) = f_bwd.sample(x as f64 + u, y as f64 + v)?;
                (((u + bu).powi(2) + (v + bv).powi(2)).sqrt() <= threshold_px).then_some(())
            });
            if keep.is_none() {
                out.invalidate(x, y);
            }
        }
    }
    Ok(out)
}

/// Cosine similarity between `a` and `b`, `None` when either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na <= 1e-12 || nb <= 1e-12 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

/// Keeps a pixel iff the cosine similarity between its descriptor and the
/// bilinearly sampled descriptor at its flow target is at least `threshold`.
pub fn appearance_filter(
    flow: &FlowField,
    desc_src: &DescriptorMap,
    desc_dst: &DescriptorMap,
    threshold: f64,
) -> Result<FlowField> {
    for d in [desc_src, desc_dst] {
        if d.width != flow.width || d.height != flow.height {
            return Err(RnaError::contract(format!(
                "descriptor map {}x{} does not match flow {}x{}",
                d.width, d.height, flow.width, flow.height
            )));
        }
    }
    if desc_src.dim != desc_dst.dim {
        return Err(RnaError::contract("descriptor dimensions differ between frames"));
    }
    let mut out = flow.clone();
    let mut src = vec![0.0; desc_src.dim];
    let mut dst = vec![0.0; desc_dst.dim];
    for y in 0..flow.height {
        for x in 0..flow.width {
            let keep = flow.get(x, y).and_then(|(u, v)| {
                for (s, &d) in src.iter_mut().zip(desc_src.at(x, y)) {
                    *s = d as f64;
                }
                desc_dst.sample(x as f64 + u, y as f64 + v, &mut dst)?;
                (cosine(&src, &dst)? >= threshold).then_some(())
            });
            if keep.is_none() {
                out.invalidate(x, y);
            }
        }
    }
    Ok(out)
}
