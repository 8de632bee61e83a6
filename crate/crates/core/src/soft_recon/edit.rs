use super::matting::{MattingBackend, SoftMaskStack};
use super::trimap::make_trimap;
use crate::atlas_net::AtlasNetworks;
use crate::error::{Result, RnaError};
use crate::media_io::{AtlasImage, BinaryMask, Frame, VideoClip};
use crate::morph::dilate_square;

/// Soft-mask values at or above this take the fully-opaque branch.
pub const OPAQUE_THRESHOLD: f64 = 1.0 - 1e-6;

/// One 8-bit quantum.
pub const DEFAULT_EDIT_EPSILON: f64 = 1.0 / 255.0;

fn pixel_points(clip: &VideoClip, t: usize) -> Vec<[f64; 3]> {
    let g = clip.geometry();
    let mut pts = Vec::with_capacity(g.pixels_per_frame());
    for y in 0..g.height {
        for x in 0..g.width {
            let c = g.normalize_subpixel(x as f64, y as f64, t);
            pts.push([c.x, c.y, c.t]);
        }
    }
    pts
}

fn check_geometry(clip: &VideoClip, nets: &AtlasNetworks) -> Result<()> {
    if clip.geometry() != nets.geometry {
        return Err(RnaError::contract("networks were built for a different video size"));
    }
    Ok(())
}

/// `{M >= 0.5}` for every frame.
pub fn hard_masks(clip: &VideoClip, nets: &AtlasNetworks) -> Result<Vec<BinaryMask>> {
    check_geometry(clip, nets)?;
    let (w, h) = (clip.width(), clip.height());
    (0..clip.n_frames())
        .map(|t| {
            let m = nets.eval_mask(&pixel_points(clip, t))?;
            BinaryMask::from_vec(w, h, m.into_iter().map(|v| v >= 0.5).collect())
        })
        .collect()
}

/// Trimaps from the hard masks, then the backend on every frame.
pub fn soft_masks(
    clip: &VideoClip,
    nets: &AtlasNetworks,
    erode_px: usize,
    dilate_px: usize,
    backend: &dyn MattingBackend,
) -> Result<SoftMaskStack> {
    let frames = hard_masks(clip, nets)?
        .iter()
        .enumerate()
        .map(|(t, m)| backend.matte(t, clip.frame(t), &make_trimap(m, erode_px, dilate_px)?))
        .collect::<Result<_>>()?;
    Ok(SoftMaskStack { frames })
}

/// Color of whatever covers the ROI at a partially-opaque pixel:
/// `(c - m * l * a) / (1 - m)`. Not clamped.
pub fn occluder_color(c: [f64; 3], m_hat: f64, l: [f64; 3], a: [f64; 3]) -> Result<[f64; 3]> {
    if !(m_hat < OPAQUE_THRESHOLD) {
        return Err(RnaError::contract(format!("soft mask {m_hat} is opaque, no occluder color")));
    }
    Ok(std::array::from_fn(|k| (c[k] - m_hat * l[k] * a[k]) / (1.0 - m_hat)))
}

/// Edited color of one pixel with effective mask `m`, before clamping.
#[inline]
pub fn edit_pixel(m: f64, l: [f64; 3], a_net: [f64; 3], a_edit: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    if m >= OPAQUE_THRESHOLD {
        std::array::from_fn(|k| l[k] * a_edit[k])
    } else {
        std::array::from_fn(|k| c[k] + m * l[k] * (a_edit[k] - a_net[k]))
    }
}

/// Cells where the edited atlas differs from the render by more than
/// `epsilon` in some channel, grown by one cell.
pub fn atlas_mask(render: &AtlasImage, edited: &AtlasImage, epsilon: f64) -> Result<BinaryMask> {
    if render.size != edited.size {
        return Err(RnaError::contract(format!(
            "edited atlas is {0}x{0}, rendered atlas is {1}x{1}",
            edited.size, render.size
        )));
    }
    let changed = BinaryMask::from_fn(render.size, render.size, |i, j| {
        let (a, b) = (render.get(i, j), edited.get(i, j));
        (0..3).any(|k| (a[k] - b[k]).abs() > epsilon)
    });
    Ok(dilate_square(&changed, 1))
}

/// Everything an edit needs besides the clip and the networks.
#[derive(Debug, Clone)]
pub struct EditBundle {
    pub edited: AtlasImage,
    pub mask: BinaryMask,
    pub soft: SoftMaskStack,
}

impl EditBundle {
    pub fn new(render: &AtlasImage, edited: AtlasImage, soft: SoftMaskStack, epsilon: f64) -> Result<Self> {
        let mask = atlas_mask(render, &edited, epsilon)?;
        Ok(Self { edited, mask, soft })
    }
}

/// Propagates the atlas edit into every frame. Pixels whose effective mask
/// is zero are copied unchanged.
pub fn reconstruct_edit(clip: &VideoClip, nets: &AtlasNetworks, bundle: &EditBundle) -> Result<Vec<Frame>> {
    check_geometry(clip, nets)?;
    let res = bundle.edited.size;
    if (bundle.mask.width, bundle.mask.height) != (res, res) {
        return Err(RnaError::contract("atlas mask and edited atlas sizes differ"));
    }
    let (w, h) = (clip.width(), clip.height());
    let mut out = Vec::with_capacity(clip.n_frames());
    for t in 0..clip.n_frames() {
        let soft = bundle.soft.frame(t)?;
        if (soft.width, soft.height) != (w, h) {
            return Err(RnaError::contract(format!("soft mask {t} is {}x{}", soft.width, soft.height)));
        }
        let pts = pixel_points(clip, t);
        let uv = nets.eval_mapping(&pts)?;
        let mut idx = Vec::new();
        let mut m = Vec::new();
        for (i, q) in uv.iter().enumerate() {
            let (ci, cj) = bundle.edited.nearest_cell(q[0], q[1]);
            if bundle.mask.get(ci, cj) {
                let v = soft.data[i];
                if v > 0.0 {
                    idx.push(i);
                    m.push(v);
                }
            }
        }
        let mut frame = clip.frame(t).clone();
        if !idx.is_empty() {
            let sel: Vec<[f64; 2]> = idx.iter().map(|&i| uv[i]).collect();
            let times = vec![pts[0][2]; sel.len()];
            let a_net = nets.eval_atlas(&sel)?;
            let l = nets.eval_illum(&sel, &times)?;
            for (k, &i) in idx.iter().enumerate() {
                let (x, y) = (i % w, i / w);
                let a_edit = bundle.edited.sample_bilinear(sel[k][0], sel[k][1]);
                frame.set(x, y, edit_pixel(m[k], l[k], a_net[k], a_edit, frame.get_f64(x, y)));
            }
        }
        out.push(frame);
    }
    Ok(out)
}
