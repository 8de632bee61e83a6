use std::cell::RefCell;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Result, RnaError};
use crate::media_io::{read_flo, FlowField, VideoClip};

/// Source of raw per-pair optical flow `f_{src -> dst}` at video resolution.
pub trait FlowProvider {
    fn flow(&self, src: usize, dst: usize) -> Result<FlowField>;
}

/// Precomputed flows stored as `<dir>/flow_<src>_<dst>.flo`.
#[derive(Debug, Clone)]
pub struct FileFlowProvider {
    dir: PathBuf,
    width: usize,
    height: usize,
}

impl FileFlowProvider {
    pub fn new(dir: impl Into<PathBuf>, width: usize, height: usize) -> Self {
        Self {
            dir: dir.into(),
            width,
            height,
        }
    }

    pub fn file_name(src: usize, dst: usize) -> String {
        format!("flow_{src}_{dst}.flo")
    }

    pub fn path(&self, src: usize, dst: usize) -> PathBuf {
        self.dir.join(Self::file_name(src, dst))
    }

    /// Every pair the composition and pair building may request for a clip of
    /// `n_frames` frames with neighborhoods of `window` frames.
    pub fn required_pairs(n_frames: usize, window: usize) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for s in 0..n_frames {
            for d in 0..n_frames {
                if s != d && s.abs_diff(d) <= window.max(1) {
                    pairs.push((s, d));
                }
            }
        }
        pairs
    }

    /// Names of required files that are absent from the directory.
    pub fn missing_files(&self, n_frames: usize, window: usize) -> Vec<String> {
        Self::required_pairs(n_frames, window)
            .into_iter()
            .filter(|&(s, d)| !self.path(s, d).is_file())
            .map(|(s, d)| Self::file_name(s, d))
            .collect()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl FlowProvider for FileFlowProvider {
    fn flow(&self, src: usize, dst: usize) -> Result<FlowField> {
        let f = read_flo(&self.path(src, dst), src, dst)?;
        if f.width != self.width || f.height != self.height {
            return Err(RnaError::format(format!(
                "{} is {}x{}, video is {}x{}",
                Self::file_name(src, dst),
                f.width,
                f.height,
                self.width,
                self.height
            )));
        }
        Ok(f)
    }
}

/// Flows held in memory, keyed by `(src, dst)`.
#[derive(Debug, Clone, Default)]
pub struct MemoryFlowProvider {
    flows: HashMap<(usize, usize), FlowField>,
}

impl MemoryFlowProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, flow: FlowField) {
        self.flows.insert((flow.src_frame, flow.dst_frame), flow);
    }
}

impl FlowProvider for MemoryFlowProvider {
    fn flow(&self, src: usize, dst: usize) -> Result<FlowField> {
        self.flows
            .get(&(src, dst))
            .cloned()
            .ok_or_else(|| RnaError::NotFound(format!("flow {src} -> {dst}")))
    }
}

/// Exhaustive integer block matching with parabolic subpixel refinement.
///
/// For every displacement in `[-radius, radius]^2` the per-pixel RGB squared
/// difference is box-filtered over a `(2*half_patch+1)^2` window with an
/// integral image; each pixel keeps its cheapest displacement (ties go to the
/// shorter one). Meant for synthetic clips, not as a replacement for a learned
/// flow model.
pub struct BlockMatchProvider<'a> {
    clip: &'a VideoClip,
    pub radius: usize,
    pub half_patch: usize,
    cache: RefCell<HashMap<(usize, usize), FlowField>>,
}

impl<'a> BlockMatchProvider<'a> {
    pub fn new(clip: &'a VideoClip, radius: usize) -> Self {
        Self {
            clip,
            radius,
            half_patch: 2,
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn estimate(&self, src: usize, dst: usize) -> FlowField {
        let (w, h) = (self.clip.width(), self.clip.height());
        let a = self.clip.frame(src);
        let b = self.clip.frame(dst);
        let r = self.radius as i64;
        let hp = self.half_patch as i64;
        let n = w * h;
        let mut best = vec![f64::INFINITY; n];
        let mut best_d = vec![(0i64, 0i64); n];
        let mut costs: HashMap<(i64, i64), Vec<f64>> = HashMap::new();
        let mut displacements: Vec<(i64, i64)> = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                displacements.push((dx, dy));
            }
        }
        displacements.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
        let big = 1e6;
        for &(dx, dy) in &displacements {
            // integral image of squared differences, out-of-frame targets cost `big`
            let mut integral = vec![0.0f64; (w + 1) * (h + 1)];
            for y in 0..h {
                let mut row = 0.0;
                for x in 0..w {
                    let tx = x as i64 + dx;
                    let ty = y as i64 + dy;
                    let d = if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
                        big
                    } else {
                        let p = a.get(x, y);
                        let q = b.get(tx as usize, ty as usize);
                        (0..3).map(|c| ((p[c] - q[c]) as f64).powi(2)).sum()
                    };
                    row += d;
                    integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
                }
            }
            let mut cost = vec![0.0; n];
            for y in 0..h {
                let y0 = (y as i64 - hp).max(0) as usize;
                let y1 = ((y as i64 + hp + 1) as usize).min(h);
                for x in 0..w {
                    let x0 = (x as i64 - hp).max(0) as usize;
                    let x1 = ((x as i64 + hp + 1) as usize).min(w);
                    let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                        - integral[y1 * (w + 1) + x0]
                        + integral[y0 * (w + 1) + x0];
                    let s = s / ((x1 - x0) * (y1 - y0)) as f64;
                    cost[y * w + x] = s;
                    if s < best[y * w + x] - 1e-12 {
                        best[y * w + x] = s;
                        best_d[y * w + x] = (dx, dy);
                    }
                }
            }
            costs.insert((dx, dy), cost);
        }
        let refine = |c_m: Option<&Vec<f64>>, c_0: f64, c_p: Option<&Vec<f64>>, i: usize| -> f64 {
            match (c_m, c_p) {
                (Some(m), Some(p)) => {
                    let (m, p) = (m[i], p[i]);
                    let denom = m - 2.0 * c_0 + p;
                    if m < big && p < big && denom > 1e-12 {
                        (0.5 * (m - p) / denom).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            }
        };
        FlowField::from_fn(w, h, src, dst, |x, y| {
            let i = y * w + x;
            if !best[i].is_finite() || best[i] >= big * 0.5 {
                return None;
            }
            let (dx, dy) = best_d[i];
            let sx = refine(costs.get(&(dx - 1, dy)), best[i], costs.get(&(dx + 1, dy)), i);
            let sy = refine(costs.get(&(dx, dy - 1)), best[i], costs.get(&(dx, dy + 1)), i);
            Some((dx as f64 + sx, dy as f64 + sy))
        })
    }
}

impl FlowProvider for BlockMatchProvider<'_> {
    fn flow(&self, src: usize, dst: usize) -> Result<FlowField> {
        if src >= self.clip.n_frames() || dst >= self.clip.n_frames() {
            return Err(RnaError::Bounds {
                what: "flow frame",
                index: src.max(dst),
                size: self.clip.n_frames(),
            });
        }
        if let Some(f) = self.cache.borrow().get(&(src, dst)) {
            return Ok(f.clone());
        }
        let f = self.estimate(src, dst);
        self.cache.borrow_mut().insert((src, dst), f.clone());
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_io::{write_flo, Frame};

    fn texture(x: f64, y: f64) -> [f64; 3] {
        [
            0.5 + 0.4 * (0.9 * x + 0.3 * y).sin(),
            0.5 + 0.4 * (0.5 * y - 0.7 * x).cos(),
            0.5 + 0.3 * (0.4 * x * 0.8 + 1.1 * y).sin(),
        ]
    }

    #[test]
    fn block_matching_recovers_integer_translation() {
        let frames = (0..2)
            .map(|t| Frame::from_fn(24, 20, |x, y| texture(x as f64 - 2.0 * t as f64, y as f64 + t as f64)))
            .collect();
        let clip = VideoClip::new(frames).unwrap();
        let p = BlockMatchProvider::new(&clip, 4);
        let f = p.flow(0, 1).unwrap();
        let mut good = 0;
        let mut total = 0;
        for y in 4..16 {
            for x in 4..18 {
                total += 1;
                if let Some((u, v)) = f.get(x, y) {
                    if (u - 2.0).abs() < 0.1 && (v + 1.0).abs() < 0.1 {
                        good += 1;
                    }
                }
            }
        }
        assert_eq!(good, total);
    }

    #[test]
    fn file_provider_reads_and_reports_missing() {
        let dir = tempfile::tempdir().unwrap();
        write_flo(&FlowField::zeros(3, 2, 0, 1), &dir.path().join("flow_0_1.flo")).unwrap();
        let p = FileFlowProvider::new(dir.path(), 3, 2);
        assert_eq!(p.flow(0, 1).unwrap().valid_count(), 6);
        assert!(matches!(p.flow(1, 0), Err(RnaError::NotFound(_))));
        assert_eq!(p.missing_files(2, 7), vec!["flow_1_0.flo".to_string()]);
        let wrong = FileFlowProvider::new(dir.path(), 4, 2);
        assert!(matches!(wrong.flow(0, 1), Err(RnaError::Format(_))));
    }
}
