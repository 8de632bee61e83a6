//! Middlebury `.flo` flow fields.
//!
//! Layout: the four bytes `PIEH`, little-endian `i32` width and height, then
//! row-major little-endian `f32` `(u, v)` pairs in pixel units. Components with
//! magnitude above `1e9` mark a pixel without a flow estimate.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Result, RnaError};

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;
pub const UNKNOWN_FLOW: f32 = 1e10;

/// Per-pixel displacement from `src_frame` into `dst_frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub src_frame: usize,
    pub dst_frame: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    valid: Vec<bool>,
}

impl FlowField {
    /// A fully valid zero field.
    pub fn zeros(width: usize, height: usize, src_frame: usize, dst_frame: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            src_frame,
            dst_frame,
            u: vec![0.0; n],
            v: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    /// A field with no valid pixel.
    pub fn invalid(width: usize, height: usize, src_frame: usize, dst_frame: usize) -> Self {
        let mut f = Self::zeros(width, height, src_frame, dst_frame);
        f.valid.iter_mut().for_each(|v| *v = false);
        f
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        src_frame: usize,
        dst_frame: usize,
        f: impl Fn(usize, usize) -> Option<(f64, f64)>,
    ) -> Self {
        let mut out = Self::invalid(width, height, src_frame, dst_frame);
        for y in 0..height {
            for x in 0..width {
                if let Some((du, dv)) = f(x, y) {
                    out.set(x, y, du, dv);
                }
            }
        }
        out
    }

    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.idx(x, y)]
    }

    /// Displacement at an integer pixel, `None` when invalid.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        let i = self.idx(x, y);
        self.valid[i].then(|| (self.u[i] as f64, self.v[i] as f64))
    }

    /// Raw stored components regardless of validity.
    pub fn raw(&self, x: usize, y: usize) -> (f32, f32) {
        let i = self.idx(x, y);
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, du: f64, dv: f64) {
        let i = self.idx(x, y);
        self.u[i] = du as f32;
        self.v[i] = dv as f32;
        self.valid[i] = true;
    }

    #[inline]
    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = self.idx(x, y);
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &FlowField) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample at a continuous pixel position. Returns `None` when the
    /// position leaves `[0,W-1]x[0,H-1]` or any corner with non-zero weight is invalid.
    pub fn sample(&self, fx: f64, fy: f64) -> Option<(f64, f64)> {
        let (corners, weights) = bilinear_corners(fx, fy, self.width, self.height)?;
        let (mut du, mut dv) = (0.0, 0.0);
        for (&(x, y), &w) in corners.iter().zip(&weights) {
            if w == 0.0 {
                continue;
            }
            let (cu, cv) = self.get(x, y)?;
            du += w * cu;
            dv += w * cv;
        }
        Some((du, dv))
    }

    pub fn to_flo_bytes(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(12 + n * 8);
        out.extend_from_slice(FLO_MAGIC);
        out.write_i32::<LittleEndian>(self.width as i32).unwrap();
        out.write_i32::<LittleEndian>(self.height as i32).unwrap();
        for i in 0..n {
            let (u, v) = if self.valid[i] {
                (self.u[i], self.v[i])
            } else if is_unknown(self.u[i]) || is_unknown(self.v[i]) {
                (self.u[i], self.v[i])
            } else {
                (UNKNOWN_FLOW, UNKNOWN_FLOW)
            };
            out.write_f32::<LittleEndian>(u).unwrap();
            out.write_f32::<LittleEndian>(v).unwrap();
        }
        out
    }

    pub fn from_flo_bytes(bytes: &[u8], src_frame: usize, dst_frame: usize) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| RnaError::format("truncated .flo header"))?;
        if &magic != FLO_MAGIC {
            return Err(RnaError::format(format!(
                "bad .flo magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let w = r
            .read_i32::<LittleEndian>()
            .map_err(|_| RnaError::format("truncated .flo header"))?;
        let h = r
            .read_i32::<LittleEndian>()
            .map_err(|_| RnaError::format("truncated .flo header"))?;
        if w <= 0 || h <= 0 {
            return Err(RnaError::format(format!("bad .flo dimensions {w}x{h}")));
        }
        let (w, h) = (w as usize, h as usize);
        let n = w * h;
        if bytes.len() < 12 + n * 8 {
            return Err(RnaError::format(format!(
                "truncated .flo payload: {} bytes for {w}x{h}",
                bytes.len() - 12
            )));
        }
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for _ in 0..n {
            let a = r.read_f32::<LittleEndian>().unwrap();
            let b = r.read_f32::<LittleEndian>().unwrap();
            valid.push(!(is_unknown(a) || is_unknown(b)));
            u.push(a);
            v.push(b);
        }
        Ok(Self {
            width: w,
            height: h,
            src_frame,
            dst_frame,
            u,
            v,
            valid,
        })
    }
}

fn is_unknown(c: f32) -> bool {
    !c.is_finite() || c.abs() > UNKNOWN_FLOW_THRESHOLD
}

/// Corner pixels and weights of a bilinear lookup.
/// `None` when `(fx, fy)` lies outside `[0,W-1]x[0,H-1]`.
pub(crate) fn bilinear_corners(
    fx: f64,
    fy: f64,
    width: usize,
    height: usize,
) -> Option<([(usize, usize); 4], [f64; 4])> {
    if !(fx >= 0.0 && fy >= 0.0 && fx <= (width - 1) as f64 && fy <= (height - 1) as f64) {
        return None;
    }
    let x0 = (fx.floor() as usize).min(width.saturating_sub(2));
    let y0 = (fy.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let ax = fx - x0 as f64;
    let ay = fy - y0 as f64;
    Some((
        [(x0, y0), (x1, y0), (x0, y1), (x1, y1)],
        [
            (1.0 - ax) * (1.0 - ay),
            ax * (1.0 - ay),
            (1.0 - ax) * ay,
            ax * ay,
        ],
    ))
}

pub fn read_flo(path: &Path, src_frame: usize, dst_frame: usize) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            RnaError::NotFound(format!("flow file {}", path.display()))
        } else {
            RnaError::io(path, e)
        }
    })?;
    FlowField::from_flo_bytes(&bytes, src_frame, dst_frame)
}

pub fn write_flo(flow: &FlowField, path: &Path) -> Result<()> {
    fs::write(path, flow.to_flo_bytes()).map_err(|e| RnaError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_constant_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let f = FlowField::from_fn(2, 2, 0, 1, |_, _| Some((1.5, -0.25)));
        write_flo(&f, &path).unwrap();
        let g = read_flo(&path, 0, 1).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.get(1, 1), Some((1.5, -0.25)));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = FlowField::zeros(2, 2, 0, 1).to_flo_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            FlowField::from_flo_bytes(&bytes, 0, 1),
            Err(RnaError::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = FlowField::zeros(3, 3, 0, 1).to_flo_bytes();
        assert!(matches!(
            FlowField::from_flo_bytes(&bytes[..bytes.len() - 4], 0, 1),
            Err(RnaError::Format(_))
        ));
        assert!(matches!(
            FlowField::from_flo_bytes(&bytes[..6], 0, 1),
            Err(RnaError::Format(_))
        ));
    }

    #[test]
    fn sentinel_marks_invalid() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(FLO_MAGIC);
        bytes.write_i32::<LittleEndian>(2).unwrap();
        bytes.write_i32::<LittleEndian>(2).unwrap();
        for (u, v) in [(1e10f32, 0.0f32), (0.5, 0.5), (0.0, 0.0), (-2.0, 3.0)] {
            bytes.write_f32::<LittleEndian>(u).unwrap();
            bytes.write_f32::<LittleEndian>(v).unwrap();
        }
        let f = FlowField::from_flo_bytes(&bytes, 0, 1).unwrap();
        let oracle: Vec<bool> = [(1e10f32, 0.0f32), (0.5, 0.5), (0.0, 0.0), (-2.0, 3.0)]
            .iter()
            .map(|(u, v)| u.abs() <= 1e9 && v.abs() <= 1e9)
            .collect();
        let got: Vec<bool> = (0..4).map(|i| f.is_valid(i % 2, i / 2)).collect();
        assert_eq!(got, oracle);
        assert!(!f.is_valid(0, 0));
        // Re-encoding preserves the sentinel bytes.
        assert_eq!(f.to_flo_bytes(), bytes);
    }

    #[test]
    fn bilinear_sample_interpolates_and_rejects_outside() {
        let f = FlowField::from_fn(3, 3, 0, 1, |x, y| Some((x as f64, y as f64 * 2.0)));
        let (u, v) = f.sample(0.5, 1.25).unwrap();
        assert!((u - 0.5).abs() < 1e-12 && (v - 2.5).abs() < 1e-12);
        assert!(f.sample(2.0, 2.0).is_some());
        assert!(f.sample(2.01, 0.0).is_none());
        assert!(f.sample(-0.01, 0.0).is_none());
    }

    proptest! {
        #[test]
        fn random_payload_round_trips(w in 1usize..12, h in 1usize..12,
                                      seed in proptest::collection::vec(-1e6f32..1e6, 288)) {
            let n = w * h;
            let mut bytes = Vec::new();
            bytes.extend_from_slice(FLO_MAGIC);
            bytes.write_i32::<LittleEndian>(w as i32).unwrap();
            bytes.write_i32::<LittleEndian>(h as i32).unwrap();
            for i in 0..2 * n {
                bytes.write_f32::<LittleEndian>(seed[i % seed.len()]).unwrap();
            }
            let f = FlowField::from_flo_bytes(&bytes, 0, 1).unwrap();
            prop_assert_eq!(f.to_flo_bytes(), bytes);
        }
    }
}
