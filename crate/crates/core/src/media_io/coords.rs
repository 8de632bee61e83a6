use serde::{Deserialize, Serialize};

use crate::error::{Result, RnaError};

/// Resolution and length of a clip; the normalization frame for every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoGeometry {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
}

/// A point in normalized video space `[-1,1]^3` together with the integer
/// pixel and frame indices it was derived from (rounded for subpixel points).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub ix: u32,
    pub iy: u32,
    pub it: u32,
}

fn to_unit(index: f64, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * index / (extent - 1) as f64 - 1.0
    }
}

fn from_unit(value: f64, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        (value + 1.0) * 0.5 * (extent - 1) as f64
    }
}

impl VideoGeometry {
    pub fn new(width: usize, height: usize, n_frames: usize) -> Self {
        Self {
            width,
            height,
            n_frames,
        }
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.width * self.height
    }

    pub fn total_pixels(&self) -> usize {
        self.pixels_per_frame() * self.n_frames
    }

    /// Maps integer indices onto `[-1,1]^3`; `0 -> -1`, `extent-1 -> +1`.
    pub fn normalize(&self, ix: usize, iy: usize, it: usize) -> Result<PixelCoord> {
        if ix >= self.width {
            return Err(RnaError::Bounds {
                what: "x",
                index: ix,
                size: self.width,
            });
        }
        if iy >= self.height {
            return Err(RnaError::Bounds {
                what: "y",
                index: iy,
                size: self.height,
            });
        }
        if it >= self.n_frames {
            return Err(RnaError::Bounds {
                what: "frame",
                index: it,
                size: self.n_frames,
            });
        }
        Ok(self.normalize_subpixel(ix as f64, iy as f64, it))
    }

    /// Like [`normalize`](Self::normalize) for continuous pixel positions.
    /// The integer indices are the nearest in-bounds pixel.
    pub fn normalize_subpixel(&self, fx: f64, fy: f64, it: usize) -> PixelCoord {
        let clamp_round = |v: f64, extent: usize| -> u32 {
            v.round().clamp(0.0, extent.saturating_sub(1) as f64) as u32
        };
        PixelCoord {
            x: to_unit(fx, self.width),
            y: to_unit(fy, self.height),
            t: to_unit(it as f64, self.n_frames),
            ix: clamp_round(fx, self.width),
            iy: clamp_round(fy, self.height),
            it: it as u32,
        }
    }

    /// Continuous pixel position `(fx, fy, ft)` of a normalized coordinate.
    pub fn denormalize(&self, x: f64, y: f64, t: f64) -> (f64, f64, f64) {
        (
            from_unit(x, self.width),
            from_unit(y, self.height),
            from_unit(t, self.n_frames),
        )
    }

    /// Nearest integer indices of a normalized coordinate.
    pub fn to_indices(&self, x: f64, y: f64, t: f64) -> (usize, usize, usize) {
        let (fx, fy, ft) = self.denormalize(x, y, t);
        (
            fx.round() as usize,
            fy.round() as usize,
            ft.round() as usize,
        )
    }

    pub fn normalized_t(&self, it: usize) -> f64 {
        to_unit(it as f64, self.n_frames)
    }

    /// Normalized length of a one-pixel step along x and y.
    pub fn pixel_step(&self) -> (f64, f64) {
        (
            2.0 / (self.width.max(2) - 1) as f64,
            2.0 / (self.height.max(2) - 1) as f64,
        )
    }

    /// Converts a normalized 2D displacement into pixel units.
    pub fn displacement_px(&self, du: f64, dv: f64) -> f64 {
        let (sx, sy) = self.pixel_step();
        ((du / sx).powi(2) + (dv / sy).powi(2)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corners_and_midpoint() {
        let g = VideoGeometry::new(9, 9, 9);
        let c = g.normalize(0, 0, 0).unwrap();
        assert_eq!((c.x, c.y, c.t), (-1.0, -1.0, -1.0));
        let c = g.normalize(4, 4, 4).unwrap();
        assert_eq!((c.x, c.y, c.t), (0.0, 0.0, 0.0));
        let c = g.normalize(8, 2, 0).unwrap();
        assert_eq!((c.x, c.y, c.t), (1.0, -0.5, -1.0));
    }

    #[test]
    fn out_of_range_is_bounds_error() {
        let g = VideoGeometry::new(9, 9, 9);
        assert!(matches!(
            g.normalize(9, 0, 0),
            Err(RnaError::Bounds { what: "x", .. })
        ));
        assert!(matches!(
            g.normalize(0, 0, 9),
            Err(RnaError::Bounds { what: "frame", .. })
        ));
    }

    proptest! {
        #[test]
        fn normalize_inverts(w in 2usize..400, h in 2usize..400, n in 2usize..80,
                             fx in 0.0f64..1.0, fy in 0.0f64..1.0, ft in 0.0f64..1.0) {
            let g = VideoGeometry::new(w, h, n);
            let ix = (fx * (w - 1) as f64) as usize;
            let iy = (fy * (h - 1) as f64) as usize;
            let it = (ft * (n - 1) as f64) as usize;
            let c = g.normalize(ix, iy, it).unwrap();
            prop_assert!(c.x >= -1.0 && c.x <= 1.0);
            prop_assert_eq!(g.to_indices(c.x, c.y, c.t), (ix, iy, it));
            prop_assert_eq!((c.ix as usize, c.iy as usize, c.it as usize), (ix, iy, it));
        }
    }
}
