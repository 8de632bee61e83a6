use std::path::{Path, PathBuf};

use super::trimap::{Trimap, TrimapLabel};
use crate::error::{Result, RnaError};
use crate::media_io::{Frame, GrayRaster};

/// Turns a frame and its trimap into a soft mask in `[0,1]`.
pub trait MattingBackend {
    fn matte(&self, t: usize, frame: &Frame, trimap: &Trimap) -> Result<GrayRaster>;
}

pub fn alpha_file_name(t: usize) -> String {
    format!("alpha_{t}.png")
}

/// Per-frame soft masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMaskStack {
    pub frames: Vec<GrayRaster>,
}

impl SoftMaskStack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> Result<&GrayRaster> {
        self.frames
            .get(t)
            .ok_or_else(|| RnaError::contract(format!("no soft mask for frame {t} ({} available)", self.frames.len())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| RnaError::io(dir, e))?;
        for (t, a) in self.frames.iter().enumerate() {
            a.save_u16(&dir.join(alpha_file_name(t)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, n_frames: usize) -> Result<Self> {
        let frames = (0..n_frames)
            .map(|t| load_alpha(&dir.join(alpha_file_name(t))))
            .collect::<Result<_>>()?;
        Ok(Self { frames })
    }
}

fn load_alpha(path: &Path) -> Result<GrayRaster> {
    if !path.is_file() {
        return Err(RnaError::format(format!("alpha file {} is missing", path.display())));
    }
    GrayRaster::load(path)
}

/// Known labels written exactly, unknown pixels taken from `unknown`.
fn compose_known(trimap: &Trimap, unknown: impl Fn(usize, usize) -> f64) -> GrayRaster {
    let mut out = GrayRaster::new(trimap.width, trimap.height);
    for y in 0..trimap.height {
        for x in 0..trimap.width {
            let v = match trimap.get(x, y) {
                TrimapLabel::Foreground => 1.0,
                TrimapLabel::Background => 0.0,
                TrimapLabel::Unknown => unknown(x, y).clamp(0.0, 1.0),
            };
            out.set(x, y, v);
        }
    }
    out
}

/// Reads precomputed mattes (`alpha_<t>.png`) from a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalMatting {
    pub dir: PathBuf,
}

impl MattingBackend for ExternalMatting {
    fn matte(&self, t: usize, frame: &Frame, trimap: &Trimap) -> Result<GrayRaster> {
        let path = self.dir.join(alpha_file_name(t));
        let a = load_alpha(&path)?;
        if (a.width, a.height) != (frame.width, frame.height) || (trimap.width, trimap.height) != (frame.width, frame.height) {
            return Err(RnaError::format(format!(
                "{} is {}x{}, frame is {}x{}",
                path.display(),
                a.width,
                a.height,
                frame.width,
                frame.height
            )));
        }
        Ok(compose_known(trimap, |x, y| a.get(x, y)))
    }
}

/// Local color-model matting. Each unknown pixel compares its color with the
/// mean foreground and background colors in a square window, and the raw
/// alphas are then box-filtered over the unknown band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinMatting {
    /// Half-width of the color-model window.
    pub window: usize,
}

impl BuiltinMatting {
    /// Window wide enough to reach across an unknown band of the given radii.
    pub fn for_radii(erode_px: usize, dilate_px: usize) -> Self {
        Self {
            window: erode_px + dilate_px + 2,
        }
    }
}

/// Summed-area table of per-pixel RGB sums and counts over one label.
struct LabelSums {
    w: usize,
    sums: Vec<[f64; 4]>,
}

impl LabelSums {
    fn new(frame: &Frame, trimap: &Trimap, label: TrimapLabel) -> Self {
        let (w, h) = (frame.width, frame.height);
        let mut sums = vec![[0.0; 4]; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = [0.0; 4];
            for x in 0..w {
                if trimap.get(x, y) == label {
                    let c = frame.get_f64(x, y);
                    row[0] += c[0];
                    row[1] += c[1];
                    row[2] += c[2];
                    row[3] += 1.0;
                }
                let above = sums[y * (w + 1) + x + 1];
                let cell = &mut sums[(y + 1) * (w + 1) + x + 1];
                for k in 0..4 {
                    cell[k] = above[k] + row[k];
                }
            }
        }
        Self { w, sums }
    }

    /// Mean color over `[x0, x1) x [y0, y1)`, `None` when no pixel has the label.
    fn mean(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Option<[f64; 3]> {
        let at = |x: usize, y: usize| self.sums[y * (self.w + 1) + x];
        let (a, b, c, d) = (at(x1, y1), at(x0, y1), at(x1, y0), at(x0, y0));
        let s: [f64; 4] = std::array::from_fn(|k| a[k] - b[k] - c[k] + d[k]);
        (s[3] > 0.5).then(|| [s[0] / s[3], s[1] / s[3], s[2] / s[3]])
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl MattingBackend for BuiltinMatting {
    fn matte(&self, _t: usize, frame: &Frame, trimap: &Trimap) -> Result<GrayRaster> {
        let (w, h) = (frame.width, frame.height);
        if (trimap.width, trimap.height) != (w, h) {
            return Err(RnaError::contract("trimap and frame sizes differ"));
        }
        if self.window == 0 {
            return Err(RnaError::contract("matting window must be positive"));
        }
        let fg = LabelSums::new(frame, trimap, TrimapLabel::Foreground);
        let bg = LabelSums::new(frame, trimap, TrimapLabel::Background);
        let r = self.window;
        let mut raw = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                if trimap.get(x, y) != TrimapLabel::Unknown {
                    continue;
                }
                let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
                let (x1, y1) = ((x + r + 1).min(w), (y + r + 1).min(h));
                let c = frame.get_f64(x, y);
                raw[y * w + x] = match (fg.mean(x0, y0, x1, y1), bg.mean(x0, y0, x1, y1)) {
                    (Some(f), Some(b)) => {
                        let (df, db) = (dist(c, f), dist(c, b));
                        if df + db > 0.0 {
                            db / (df + db)
                        } else {
                            0.5
                        }
                    }
                    (Some(_), None) => 1.0,
                    (None, Some(_)) => 0.0,
                    (None, None) => 0.5,
                };
            }
        }
        Ok(compose_known(trimap, |x, y| {
            let mut acc = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    if trimap.get(xx, yy) == TrimapLabel::Unknown {
                        acc += raw[yy * w + xx];
                        n += 1.0;
                    }
                }
            }
            acc / n
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::super::trimap::make_trimap;
    use super::*;
    use crate::media_io::BinaryMask;

    fn two_tone(w: usize, h: usize, split: usize) -> Frame {
        Frame::from_fn(w, h, |x, _| if x < split { [0.9, 0.2, 0.1] } else { [0.1, 0.3, 0.8] })
    }

    #[test]
    fn empty_band_gives_the_hard_mask() {
        let mask = BinaryMask::filled(12, 10, true);
        let trimap = make_trimap(&mask, 2, 2).unwrap();
        let a = BuiltinMatting::for_radii(2, 2).matte(0, &two_tone(12, 10, 6), &trimap).unwrap();
        assert_eq!(a, GrayRaster::from_mask(&mask));
    }

    #[test]
    fn foreground_colored_band_pixels_are_opaque() {
        // the mask stops 3 px short of the true color edge
        let (w, h, split) = (40, 20, 20);
        let mask = BinaryMask::from_fn(w, h, |x, _| x < split - 3);
        let trimap = make_trimap(&mask, 4, 4).unwrap();
        let a = BuiltinMatting::for_radii(4, 4).matte(0, &two_tone(w, h, split), &trimap).unwrap();
        for x in 0..w {
            let (label, v) = (trimap.get(x, 10), a.get(x, 10));
            match label {
                TrimapLabel::Foreground => assert_eq!(v, 1.0),
                TrimapLabel::Background => assert_eq!(v, 0.0),
                TrimapLabel::Unknown if x + 1 < split => assert!(v >= 0.9, "x={x}: {v}"),
                TrimapLabel::Unknown if x > split => assert!(v <= 0.1, "x={x}: {v}"),
                TrimapLabel::Unknown => assert!((0.0..=1.0).contains(&v)),
            }
        }
    }

    #[test]
    fn external_alpha_passes_through_the_band() {
        let dir = tempfile::tempdir().unwrap();
        let (w, h) = (16, 12);
        let mut src = GrayRaster::new(w, h);
        for y in 0..h {
            for x in 0..w {
                src.set(x, y, ((x * 7919 + y * 104729) % 65536) as f64 / 65535.0);
            }
        }
        src.save_u16(&dir.path().join(alpha_file_name(3))).unwrap();
        let mask = BinaryMask::from_fn(w, h, |x, _| x < 8);
        let trimap = make_trimap(&mask, 2, 2).unwrap();
        let backend = ExternalMatting { dir: dir.path().to_path_buf() };
        let a = backend.matte(3, &Frame::new(w, h), &trimap).unwrap();
        for y in 0..h {
            for x in 0..w {
                let want = match trimap.get(x, y) {
                    TrimapLabel::Unknown => src.get(x, y),
                    TrimapLabel::Foreground => 1.0,
                    TrimapLabel::Background => 0.0,
                };
                assert_eq!(a.get(x, y).to_bits(), want.to_bits());
            }
        }
        assert!(matches!(backend.matte(4, &Frame::new(w, h), &trimap), Err(RnaError::Format(_))));
        let small = make_trimap(&BinaryMask::filled(8, 8, true), 1, 1).unwrap();
        assert!(matches!(backend.matte(3, &Frame::new(8, 8), &small), Err(RnaError::Format(_))));
    }

    #[test]
    fn stack_round_trips_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let frames = (0..3)
            .map(|t| {
                let mut g = GrayRaster::new(5, 4);
                for (i, v) in g.data.iter_mut().enumerate() {
                    *v = ((i * 4099 + t * 17) % 65536) as f64 / 65535.0;
                }
                g
            })
            .collect();
        let s = SoftMaskStack { frames };
        s.save(dir.path()).unwrap();
        assert_eq!(SoftMaskStack::load(dir.path(), 3).unwrap(), s);
        assert!(matches!(SoftMaskStack::load(dir.path(), 4), Err(RnaError::Format(_))));
    }
}
