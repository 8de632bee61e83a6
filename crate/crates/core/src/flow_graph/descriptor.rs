use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Result, RnaError};
use crate::media_io::{Frame, VideoClip};

const FEATURE_MAGIC: &[u8; 8] = b"RNAFEAT\0";

/// Dense per-pixel feature vectors for one frame, row-major with `dim`
/// contiguous values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl DescriptorMap {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() != width * height * dim {
            return Err(RnaError::format(format!(
                "descriptor data has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                dim
            )));
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    /// Bilinear interpolation of descriptors, `None` outside `[0,W-1]x[0,H-1]`.
    pub fn sample(&self, fx: f64, fy: f64, out: &mut [f64]) -> Option<()> {
        let (corners, weights) =
            crate::media_io::bilinear_corners(fx, fy, self.width, self.height)?;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&(x, y), &w) in corners.iter().zip(weights.iter()) {
            if w == 0.0 {
                continue;
            }
            for (o, &d) in out.iter_mut().zip(self.at(x, y)) {
                *o += w * d as f64;
            }
        }
        Some(())
    }

    /// Mean-free 5x5 RGB patch vectors with border replication (dim 75).
    pub fn from_patches(frame: &Frame) -> Self {
        const HALF: i64 = 2;
        let (w, h) = (frame.width, frame.height);
        let side = (2 * HALF + 1) as usize;
        let dim = side * side * 3;
        let mut data = vec![0.0f32; w * h * dim];
        let mut patch = vec![0.0f64; dim];
        for y in 0..h {
            for x in 0..w {
                let mut mean = [0.0f64; 3];
                let mut k = 0;
                for dy in -HALF..=HALF {
                    for dx in -HALF..=HALF {
                        let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let c = frame.get(sx, sy);
                        for ch in 0..3 {
                            patch[k + ch] = c[ch] as f64;
                            mean[ch] += c[ch] as f64;
                        }
                        k += 3;
                    }
                }
                let n = (side * side) as f64;
                let base = (y * w + x) * dim;
                for (i, p) in patch.iter().enumerate() {
                    data[base + i] = (p - mean[i % 3] / n) as f32;
                }
            }
        }
        Self {
            width: w,
            height: h,
            dim,
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        for v in [self.width, self.height, self.dim] {
            out.write_u32::<LittleEndian>(v as u32).unwrap();
        }
        for &v in &self.data {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 8];
        bytes
            .read_exact(&mut magic)
            .map_err(|_| RnaError::format("feature file truncated"))?;
        if &magic != FEATURE_MAGIC {
            return Err(RnaError::format("feature file has wrong magic"));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = bytes
                .read_u32::<LittleEndian>()
                .map_err(|_| RnaError::format("feature file truncated"))? as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        if bytes.len() != n * 4 {
            return Err(RnaError::format(format!(
                "feature payload is {} bytes, expected {}",
                bytes.len(),
                n * 4
            )));
        }
        let mut data = vec![0.0f32; n];
        bytes.read_f32_into::<LittleEndian>(&mut data).unwrap();
        Self::new(dims[0], dims[1], dims[2], data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| RnaError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| RnaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                RnaError::NotFound(path.display().to_string())
            } else {
                RnaError::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Per-frame feature extractor used by the appearance test.
pub trait AppearanceDescriptor {
    fn describe(&self, frame: usize) -> Result<DescriptorMap>;
}

/// Built-in fallback: mean-free RGB patches computed from the clip.
pub struct PatchDescriptor<'a> {
    clip: &'a VideoClip,
}

impl<'a> PatchDescriptor<'a> {
    pub fn new(clip: &'a VideoClip) -> Self {
        Self { clip }
    }
}

impl AppearanceDescriptor for PatchDescriptor<'_> {
    fn describe(&self, frame: usize) -> Result<DescriptorMap> {
        if frame >= self.clip.n_frames() {
            return Err(RnaError::Bounds {
                what: "descriptor frame",
                index: frame,
                size: self.clip.n_frames(),
            });
        }
        Ok(DescriptorMap::from_patches(self.clip.frame(frame)))
    }
}

/// External dense features stored as `<dir>/features_<t>.bin`.
#[derive(Debug, Clone)]
pub struct FileDescriptor {
    dir: PathBuf,
    width: usize,
    height: usize,
}

impl FileDescriptor {
    pub fn new(dir: impl Into<PathBuf>, width: usize, height: usize) -> Self {
        Self {
            dir: dir.into(),
            width,
            height,
        }
    }

    pub fn file_name(frame: usize) -> String {
        format!("features_{frame}.bin")
    }
}

impl AppearanceDescriptor for FileDescriptor {
    fn describe(&self, frame: usize) -> Result<DescriptorMap> {
        let map = DescriptorMap::load(&self.dir.join(Self::file_name(frame)))?;
        if map.width != self.width || map.height != self.height {
            return Err(RnaError::format(format!(
                "{} is {}x{}, video is {}x{}",
                Self::file_name(frame),
                map.width,
                map.height,
                self.width,
                self.height
            )));
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_frame_has_zero_descriptors() {
        let f = Frame::from_fn(6, 6, |_, _| [0.3, 0.6, 0.9]);
        let d = DescriptorMap::from_patches(&f);
        assert_eq!(d.dim, 75);
        assert!(d.data.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn patch_is_mean_free() {
        let f = Frame::from_fn(7, 5, |x, y| [x as f64 / 7.0, y as f64 / 5.0, ((x * y) % 3) as f64 / 3.0]);
        let d = DescriptorMap::from_patches(&f);
        for y in 0..5 {
            for x in 0..7 {
                for ch in 0..3 {
                    let s: f32 = d.at(x, y).iter().skip(ch).step_by(3).sum();
                    assert!(s.abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn feature_file_round_trip() {
        let m = DescriptorMap::new(2, 3, 4, (0..24).map(|i| i as f32 * 0.5).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("features_0.bin");
        m.save(&p).unwrap();
        assert_eq!(DescriptorMap::load(&p).unwrap(), m);
        let fd = FileDescriptor::new(dir.path(), 2, 3);
        assert_eq!(fd.describe(0).unwrap(), m);
        assert!(matches!(fd.describe(1), Err(RnaError::NotFound(_))));
        let mut bytes = m.to_bytes();
        bytes.pop();
        assert!(DescriptorMap::from_bytes(&bytes).is_err());
    }
}
