//! Procedural test scenes with analytic flow, visibility and correspondences.

use std::path::Path;

use crate::error::{Result, RnaError};
use crate::flow_graph::{FileFlowProvider, MemoryFlowProvider};
use crate::media_io::{save_frames, write_flo, BinaryMask, FlowField, Frame, RoiSpec, VideoClip};
use crate::pipeline::GroundTruth;

fn smooth_texture(x: f64, y: f64) -> [f64; 3] {
    [
        0.50 + 0.22 * (0.21 * x + 0.05 * y).sin() + 0.12 * (0.47 * y - 0.13 * x).cos(),
        0.48 + 0.20 * (0.17 * y + 0.9).sin() + 0.12 * (0.39 * x + 0.31 * y).sin(),
        0.45 + 0.18 * (0.29 * x - 0.23 * y + 2.0).cos() + 0.10 * (0.11 * x * 0.7 + 0.53 * y).sin(),
    ]
}

fn static_texture(x: f64, y: f64) -> [f64; 3] {
    [
        0.35 + 0.25 * (0.33 * x).sin() * (0.27 * y).cos(),
        0.55 + 0.20 * (0.19 * (x + y)).cos(),
        0.60 + 0.15 * (0.41 * y - 0.2 * x).sin(),
    ]
}

fn checker(x: f64, y: f64) -> [f64; 3] {
    if ((x / 4.0).floor() + (y / 4.0).floor()) as i64 % 2 == 0 {
        [0.95, 0.15, 0.10]
    } else {
        [0.05, 0.10, 0.85]
    }
}

/// What covers a pixel of the rendered scene.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    /// World point of the translating background.
    Moving(f64, f64),
    Static(f64, f64),
    /// Local coordinates inside the occluder.
    Occluder(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Occluder {
    size: usize,
    start: (f64, f64),
    velocity: (f64, f64),
}

impl Occluder {
    fn origin(&self, t: usize) -> (f64, f64) {
        (self.start.0 + self.velocity.0 * t as f64, self.start.1 + self.velocity.1 * t as f64)
    }

    fn covers(&self, x: usize, y: usize, t: usize) -> Option<(f64, f64)> {
        let (ox, oy) = self.origin(t);
        let lx = x as f64 - ox;
        let ly = y as f64 - oy;
        let s = self.size as f64;
        (lx >= 0.0 && ly >= 0.0 && lx < s && ly < s).then_some((lx, ly))
    }
}

/// A generated clip plus everything known about it analytically.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub clip: VideoClip,
    pub roi: RoiSpec,
    /// Per frame: reference ROI pixels tracked into frame t (visible or not).
    pub tracked_roi: Vec<BinaryMask>,
    /// Per frame: tracked ROI pixels hidden by the occluder.
    pub occluded: Vec<BinaryMask>,
    width: usize,
    height: usize,
    /// Background motion per frame (pixels).
    motion: (f64, f64),
    /// Rows at or below this are static background.
    static_from_row: Option<usize>,
    occluder: Option<Occluder>,
}

impl SyntheticScene {
    /// 96x96, 24 frames; background translating (1, 0) px/frame, 20x20
    /// checkered occluder crossing the tracked ROI, 48x48 ROI in frame 0.
    pub fn s1() -> Self {
        Self::build(
            96,
            96,
            24,
            (1.0, 0.0),
            None,
            Some(Occluder {
                size: 20,
                start: (62.0, 30.0),
                velocity: (-3.0, 1.0),
            }),
            |x, y| (8..56).contains(&x) && (24..72).contains(&y),
        )
    }

    /// 96x96, 16 frames; top rows translate (1, 0) px/frame, bottom rows are
    /// static. ROI has one component on each part.
    pub fn s2() -> Self {
        Self::build(
            96,
            96,
            16,
            (1.0, 0.0),
            Some(58),
            None,
            |x, y| ((10..40).contains(&x) && (10..40).contains(&y)) || ((56..86).contains(&x) && (66..90).contains(&y)),
        )
    }

    /// Static scene: the same frame repeated, no occluder.
    pub fn static_scene(width: usize, height: usize, n_frames: usize) -> Self {
        Self::build(width, height, n_frames, (0.0, 0.0), None, None, |_, _| true)
    }

    fn build(
        width: usize,
        height: usize,
        n_frames: usize,
        motion: (f64, f64),
        static_from_row: Option<usize>,
        occluder: Option<Occluder>,
        roi: impl Fn(usize, usize) -> bool,
    ) -> Self {
        let mut scene = Self {
            clip: VideoClip::new(vec![Frame::new(1, 1), Frame::new(1, 1)]).unwrap(),
            roi: RoiSpec {
                ref_frame: 0,
                mask: BinaryMask::new(1, 1),
            },
            tracked_roi: Vec::new(),
            occluded: Vec::new(),
            width,
            height,
            motion,
            static_from_row,
            occluder,
        };
        let frames = (0..n_frames)
            .map(|t| {
                Frame::from_fn(width, height, |x, y| match scene.surface(x, y, t) {
                    Surface::Moving(wx, wy) => smooth_texture(wx, wy),
                    Surface::Static(wx, wy) => static_texture(wx, wy),
                    Surface::Occluder(lx, ly) => checker(lx, ly),
                })
            })
            .collect();
        scene.clip = VideoClip::new(frames).expect("scene has at least two frames");
        let roi_mask = BinaryMask::from_fn(width, height, roi);
        scene.roi = RoiSpec::new(0, roi_mask, &scene.clip.geometry()).expect("ROI fits the frame");
        for t in 0..n_frames {
            let mut tracked = BinaryMask::new(width, height);
            let mut hidden = BinaryMask::new(width, height);
            for (x, y) in scene.roi.mask.iter_set() {
                if let Some((tx, ty)) = scene.track(x, y, t) {
                    tracked.set(tx, ty, true);
                    if matches!(scene.surface(tx, ty, t), Surface::Occluder(..)) {
                        hidden.set(tx, ty, true);
                    }
                }
            }
            scene.tracked_roi.push(tracked);
            scene.occluded.push(hidden);
        }
        scene
    }

    pub fn n_frames(&self) -> usize {
        self.clip.n_frames()
    }

    /// Moves by `motion` per frame unless in the static band. The band is
    /// defined on screen rows so moving content never enters it.
    fn background_motion(&self, y: usize) -> (f64, f64) {
        match self.static_from_row {
            Some(r) if y >= r => (0.0, 0.0),
            _ => self.motion,
        }
    }

    fn surface(&self, x: usize, y: usize, t: usize) -> Surface {
        if let Some(o) = &self.occluder {
            if let Some((lx, ly)) = o.covers(x, y, t) {
                return Surface::Occluder(lx, ly);
            }
        }
        let (mx, my) = self.background_motion(y);
        let wx = x as f64 - mx * t as f64;
        let wy = y as f64 - my * t as f64;
        match self.static_from_row {
            Some(r) if y >= r => Surface::Static(wx, wy),
            _ => Surface::Moving(wx, wy),
        }
    }

    /// Where background pixel `(x, y)` of the reference frame sits in frame t,
    /// `None` when it leaves the frame.
    pub fn track(&self, x: usize, y: usize, t: usize) -> Option<(usize, usize)> {
        let r = self.roi.ref_frame;
        let (mx, my) = self.background_motion(y);
        let dt = t as f64 - r as f64;
        let tx = x as f64 + mx * dt;
        let ty = y as f64 + my * dt;
        let inside = tx >= 0.0 && ty >= 0.0 && tx <= (self.width - 1) as f64 && ty <= (self.height - 1) as f64;
        inside.then(|| (tx.round() as usize, ty.round() as usize))
    }

    /// Motion of the surface seen at `(x, y)` in frame `src` over `dst - src` frames.
    pub fn true_flow(&self, x: usize, y: usize, src: usize, dst: usize) -> (f64, f64) {
        let k = dst as f64 - src as f64;
        match self.surface(x, y, src) {
            Surface::Occluder(..) => {
                let v = self.occluder.unwrap().velocity;
                (v.0 * k, v.1 * k)
            }
            _ => {
                let (mx, my) = self.background_motion(y);
                (mx * k, my * k)
            }
        }
    }

    pub fn flow_field(&self, src: usize, dst: usize) -> FlowField {
        FlowField::from_fn(self.width, self.height, src, dst, |x, y| Some(self.true_flow(x, y, src, dst)))
    }

    /// Analytic flows for every pair within `window` frames.
    pub fn flow_provider(&self, window: usize) -> MemoryFlowProvider {
        let mut p = MemoryFlowProvider::new();
        for (s, d) in FileFlowProvider::required_pairs(self.n_frames(), window) {
            p.insert(self.flow_field(s, d));
        }
        p
    }

    /// Ground-truth pairs from every tracked, visible reference-ROI pixel in
    /// frame t back to the reference frame, as integer pixel positions.
    pub fn true_reference_pairs(&self) -> Vec<((usize, usize, usize), (usize, usize, usize))> {
        let r = self.roi.ref_frame;
        let mut out = Vec::new();
        for t in 0..self.n_frames() {
            if t == r {
                continue;
            }
            for (x, y) in self.roi.mask.iter_set() {
                if let Some((tx, ty)) = self.track(x, y, t) {
                    if !self.occluded[t].get(tx, ty) {
                        out.push(((tx, ty, t), (x, y, r)));
                    }
                }
            }
        }
        out
    }

    /// Pixels of the tracked ROI in frame t that are visible.
    pub fn visible_roi(&self, t: usize) -> Vec<(usize, usize)> {
        self.tracked_roi[t]
            .iter_set()
            .filter(|&(x, y)| !self.occluded[t].get(x, y))
            .collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            tracked: self.tracked_roi.clone(),
            occluded: self.occluded.clone(),
            pairs: self
                .true_reference_pairs()
                .into_iter()
                .map(|((x, y, t), (rx, ry, r))| ([x, y, t], [rx, ry, r]))
                .collect(),
        }
    }

    /// Writes `frames/`, `roi.png`, `flows/` (analytic flows) and `truth/` under `dir`.
    pub fn write_to(&self, dir: &Path, window: usize) -> Result<()> {
        let frames = dir.join("frames");
        let flows = dir.join("flows");
        for d in [&frames, &flows] {
            std::fs::create_dir_all(d).map_err(|e| RnaError::io(d, e))?;
        }
        save_frames(self.clip.frames(), &frames)?;
        self.roi.mask.save(&dir.join("roi.png"))?;
        for (s, d) in FileFlowProvider::required_pairs(self.n_frames(), window) {
            write_flo(&self.flow_field(s, d), &flows.join(FileFlowProvider::file_name(s, d)))?;
        }
        self.ground_truth().save(&dir.join("truth"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s1_layout() {
        let s = SyntheticScene::s1();
        assert_eq!((s.clip.width(), s.clip.height(), s.n_frames()), (96, 96, 24));
        assert_eq!(s.roi.mask.count(), 48 * 48);
        assert_eq!(s.occluded[0].count(), 0);
        let hit: Vec<usize> = (0..24).filter(|&t| s.occluded[t].count() > 0).collect();
        assert!(hit.len() >= 10, "occluder crosses the ROI in {hit:?}");
        // background moves right by one pixel per frame
        let a = s.clip.pixel(10, 5, 0);
        let b = s.clip.pixel(13, 5, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn s1_flow_matches_rendering_on_visible_pixels() {
        let s = SyntheticScene::s1();
        for &((x, y, t), (rx, ry, r)) in s.true_reference_pairs().iter().step_by(97) {
            assert_eq!(s.clip.pixel(x, y, t), s.clip.pixel(rx, ry, r));
            let (u, v) = s.true_flow(x, y, t, r);
            assert_eq!((x as f64 + u, y as f64 + v), (rx as f64, ry as f64));
        }
    }

    #[test]
    fn s2_has_two_components() {
        let s = SyntheticScene::s2();
        let m = &s.roi.mask;
        assert!(m.get(20, 20) && m.get(70, 80) && !m.get(50, 50));
        assert_eq!(s.clip.pixel(70, 80, 0), s.clip.pixel(70, 80, 9));
        assert_eq!(s.track(70, 80, 9), Some((70, 80)));
        assert_eq!(s.track(20, 20, 9), Some((29, 20)));
    }
}
