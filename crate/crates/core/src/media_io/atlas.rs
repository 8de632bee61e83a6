use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Result, RnaError};

pub const ATLAS_RESOLUTION: usize = 1000;

/// Square raster discretizing the atlas domain `[-1,1]^2`.
///
/// Pixel `(i, j)` covers the cell centered at
/// `u = -1 + (2i+1)/res`, `v = -1 + (2j+1)/res`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasImage {
    pub size: usize,
    data: Vec<f32>,
}

impl AtlasImage {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size * 3],
        }
    }

    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::new(size);
        for j in 0..size {
            for i in 0..size {
                img.set(i, j, f(i, j));
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f64; 3] {
        let k = (j * self.size + i) * 3;
        [
            self.data[k] as f64,
            self.data[k + 1] as f64,
            self.data[k + 2] as f64,
        ]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, rgb: [f64; 3]) {
        let k = (j * self.size + i) * 3;
        for c in 0..3 {
            self.data[k + c] = rgb[c].clamp(0.0, 1.0) as f32;
        }
    }

    /// `uv` of the center of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let s = self.size as f64;
        (
            -1.0 + (2 * i + 1) as f64 / s,
            -1.0 + (2 * j + 1) as f64 / s,
        )
    }

    /// Cell containing `uv`, clamped onto the raster.
    pub fn nearest_cell(&self, u: f64, v: f64) -> (usize, usize) {
        nearest_cell(self.size, u, v)
    }

    /// Bilinear lookup through cell centers, edge-clamped.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let s = self.size as f64;
        let px = ((u + 1.0) * 0.5 * s - 0.5).clamp(0.0, s - 1.0);
        let py = ((v + 1.0) * 0.5 * s - 0.5).clamp(0.0, s - 1.0);
        let x0 = (px.floor() as usize).min(self.size.saturating_sub(2));
        let y0 = (py.floor() as usize).min(self.size.saturating_sub(2));
        let x1 = (x0 + 1).min(self.size - 1);
        let y1 = (y0 + 1).min(self.size - 1);
        let ax = px - x0 as f64;
        let ay = py - y0 as f64;
        let (a, b, c, d) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = (1.0 - ay) * ((1.0 - ax) * a[k] + ax * b[k]) + ay * ((1.0 - ax) * c[k] + ax * d[k]);
        }
        out
    }

    /// 8-bit quantized copy; the form in which edits are compared.
    pub fn quantized(&self) -> Self {
        Self {
            size: self.size,
            data: self
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
                .collect(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::<Rgb<u8>, _>::from_raw(self.size as u32, self.size as u32, raw)
            .expect("atlas buffer length matches its dimensions")
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        if w != h {
            return Err(RnaError::format(format!("atlas must be square, got {w}x{h}")));
        }
        Ok(Self {
            size: w as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }
}

pub(crate) fn nearest_cell(size: usize, u: f64, v: f64) -> (usize, usize) {
    let s = size as f64;
    let cell = |w: f64| -> usize {
        let c = ((w + 1.0) * 0.5 * s).floor();
        if c.is_nan() {
            0
        } else {
            c.clamp(0.0, s - 1.0) as usize
        }
    };
    (cell(u), cell(v))
}

fn require_png(path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => Ok(()),
        other => Err(RnaError::format(format!(
            "atlas images must be stored losslessly as PNG, got {:?}",
            other.unwrap_or("")
        ))),
    }
}

pub fn save_atlas(atlas: &AtlasImage, path: &Path) -> Result<()> {
    require_png(path)?;
    atlas.to_rgb8().save(path).map_err(|source| RnaError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_atlas(path: &Path) -> Result<AtlasImage> {
    require_png(path)?;
    let img = image::open(path)
        .map_err(|source| RnaError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_rgb8();
    AtlasImage::from_rgb8(&img)
}
