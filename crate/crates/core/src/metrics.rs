//! Evaluation metrics: ROI PSNR, mask IoU and UV drift.

use crate::atlas_net::AtlasNetworks;
use crate::error::{Result, RnaError};
use crate::media_io::{BinaryMask, RoiSpec, VideoClip, VideoGeometry};

/// Reported for identical signals.
pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(1 / mse)` for signals in `[0,1]`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// PSNR with the error averaged over pixels and channels.
pub fn psnr(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(RnaError::contract("psnr inputs differ in length"));
    }
    if a.is_empty() {
        return Err(RnaError::contract("psnr over an empty pixel set"));
    }
    let se: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (0..3).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(psnr_from_mse(se / (3 * a.len()) as f64))
}

/// PSNR of the model's reconstruction over the listed pixels of frame `t`.
pub fn reconstruction_psnr(nets: &AtlasNetworks, clip: &VideoClip, pixels: &[(usize, usize, usize)]) -> Result<f64> {
    let g = clip.geometry();
    let mut points = Vec::with_capacity(pixels.len());
    let mut colors = Vec::with_capacity(pixels.len());
    for &(x, y, t) in pixels {
        let c = g.normalize(x, y, t)?;
        points.push([c.x, c.y, c.t]);
        colors.push(clip.pixel(x, y, t));
    }
    let s = nets.forward_model(&points, &colors)?;
    psnr(&s.recon, &colors)
}

/// PSNR over the ROI of the reference frame.
pub fn roi_psnr(nets: &AtlasNetworks, clip: &VideoClip, roi: &RoiSpec) -> Result<f64> {
    let pixels: Vec<_> = roi.inside().into_iter().map(|(x, y)| (x, y, roi.ref_frame)).collect();
    reconstruction_psnr(nets, clip, &pixels)
}

/// Intersection over union; two empty masks score 1.
pub fn mask_iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(RnaError::contract("mask IoU on differently sized masks"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.as_slice().iter().zip(truth.as_slice()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Distance between two normalized uv positions in pixel units.
pub fn uv_distance_px(g: &VideoGeometry, a: [f64; 2], b: [f64; 2]) -> f64 {
    let (sx, sy) = g.pixel_step();
    (((a[0] - b[0]) / sx).powi(2) + ((a[1] - b[1]) / sy).powi(2)).sqrt()
}

/// `|T(p) - T(q)|` in pixel units for each pair of normalized points.
pub fn uv_drift(nets: &AtlasNetworks, pairs: &[([f64; 3], [f64; 3])]) -> Result<Vec<f64>> {
    let src: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let a = nets.eval_mapping(&src)?;
    let b = nets.eval_mapping(&dst)?;
    Ok(a.iter().zip(&b).map(|(x, y)| uv_distance_px(&nets.geometry, *x, *y)).collect())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-frame masks `{M < 0.5}` restricted to `region`.
pub fn occlusion_masks(nets: &AtlasNetworks, region: &[BinaryMask]) -> Result<Vec<BinaryMask>> {
    let g = nets.geometry;
    if region.len() != g.n_frames {
        return Err(RnaError::contract(format!("{} region masks for {} frames", region.len(), g.n_frames)));
    }
    region
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let px: Vec<(usize, usize)> = r.iter_set().collect();
            let pts: Vec<[f64; 3]> = px
                .iter()
                .map(|&(x, y)| {
                    let c = g.normalize_subpixel(x as f64, y as f64, t);
                    [c.x, c.y, c.t]
                })
                .collect();
            let m = nets.eval_mask(&pts)?;
            let mut out = BinaryMask::new(r.width, r.height);
            for (&(x, y), v) in px.iter().zip(m) {
                out.set(x, y, v < 0.5);
            }
            Ok(out)
        })
        .collect()
}

/// IoU of predicted against true occlusion inside `region`, pooled over the
/// frames where the truth is non-empty there.
pub fn occlusion_iou(nets: &AtlasNetworks, region: &[BinaryMask], truth: &[BinaryMask]) -> Result<f64> {
    if truth.len() != region.len() {
        return Err(RnaError::contract("occlusion truth and region differ in frame count"));
    }
    let pred = occlusion_masks(nets, region)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for ((p, t), r) in pred.iter().zip(truth).zip(region) {
        let t = t.and(r);
        if t.count() == 0 {
            continue;
        }
        inter += p.and(&t).count();
        union += p.count() + t.count() - p.and(&t).count();
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&[[0.3; 3]], &[[0.3; 3]]).unwrap(), PSNR_CAP);
        let a = vec![[0.5, 0.2, 0.7]; 10];
        let b: Vec<_> = a.iter().map(|c| c.map(|v| v + 0.1)).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&[], &[]).is_err());
    }

    #[test]
    fn iou_examples() {
        let m = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        assert_eq!(mask_iou(&m, &m).unwrap(), 1.0);
        let n = BinaryMask::from_fn(4, 4, |x, _| x < 1);
        assert_eq!(mask_iou(&n, &m).unwrap(), 0.5);
        assert_eq!(mask_iou(&BinaryMask::new(4, 4), &BinaryMask::new(4, 4)).unwrap(), 1.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn occlusion_iou_of_fresh_mask() {
        use crate::atlas_net::NetworkConfig;
        // a fresh M is exactly 0.5, so nothing counts as occluded
        let g = VideoGeometry::new(6, 5, 2);
        let nets = AtlasNetworks::new(NetworkConfig::desk(), g, 0).unwrap();
        let region = vec![BinaryMask::filled(6, 5, true); 2];
        let mut occ = BinaryMask::new(6, 5);
        occ.set(1, 1, true);
        let truth = vec![BinaryMask::new(6, 5), occ];
        assert_eq!(occlusion_iou(&nets, &region, &truth).unwrap(), 0.0);
        assert_eq!(occlusion_iou(&nets, &region, &vec![BinaryMask::new(6, 5); 2]).unwrap(), 1.0);
        assert!(occlusion_masks(&nets, &region[..1]).is_err());
    }
}
