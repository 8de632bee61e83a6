use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};

use super::coords::VideoGeometry;
use super::raster::BinaryMask;
use crate::error::{Result, RnaError};

const FRAME_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// One RGB frame, row-major, channel values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in f(x, y) {
                    data.push(c.clamp(0.0, 1.0) as f32);
                }
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn get_f64(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.get(x, y);
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0) as f32;
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            width: w as usize,
            height: h as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::<Rgb<u8>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("frame buffer length matches its dimensions")
    }
}

/// The input video `c`: equally sized frames with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    geometry: VideoGeometry,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(RnaError::contract(format!(
                "a clip needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let (w, h) = (frames[0].width, frames[0].height);
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.width != w || f.height != h)
        {
            return Err(RnaError::format(format!(
                "frame {i} is {}x{}, expected {w}x{h}",
                f.width, f.height
            )));
        }
        let geometry = VideoGeometry::new(w, h, frames.len());
        Ok(Self { frames, geometry })
    }

    pub fn geometry(&self) -> VideoGeometry {
        self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn n_frames(&self) -> usize {
        self.geometry.n_frames
    }

    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize, t: usize) -> [f64; 3] {
        self.frames[t].get_f64(x, y)
    }
}

fn sorted_image_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            RnaError::NotFound(format!("frame directory {}", dir.display()))
        } else {
            RnaError::io(dir, e)
        }
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| RnaError::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext, Some(ref e) if extensions.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every image in `dir` in lexicographic filename order.
pub fn load_frames(dir: &Path) -> Result<VideoClip> {
    let files = sorted_image_files(dir, FRAME_EXTENSIONS)?;
    if files.is_empty() {
        return Err(RnaError::NotFound(format!(
            "no frames in {}",
            dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let img = image::open(path)
            .map_err(|source| RnaError::Image {
                path: path.clone(),
                source,
            })?
            .into_rgb8();
        frames.push(Frame::from_rgb8(&img));
    }
    VideoClip::new(frames)
}

/// Writes frames as `frame_00000.png`, ... so that [`load_frames`] reads them back in order.
pub fn save_frames(frames: &[Frame], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RnaError::io(dir, e))?;
    for (t, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{t:05}.png"));
        frame.to_rgb8().save(&path).map_err(|source| RnaError::Image {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

/// Reference frame plus the binary ROI drawn on it.
///
/// The mask may hold several disconnected components; they are edited through
/// the same atlas.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSpec {
    pub ref_frame: usize,
    pub mask: BinaryMask,
}

impl RoiSpec {
    pub fn new(ref_frame: usize, mask: BinaryMask, geometry: &VideoGeometry) -> Result<Self> {
        if ref_frame >= geometry.n_frames {
            return Err(RnaError::Bounds {
                what: "reference frame",
                index: ref_frame,
                size: geometry.n_frames,
            });
        }
        if mask.width != geometry.width || mask.height != geometry.height {
            return Err(RnaError::format(format!(
                "ROI mask is {}x{}, video is {}x{}",
                mask.width, mask.height, geometry.width, geometry.height
            )));
        }
        Ok(Self { ref_frame, mask })
    }

    /// Pixels of the reference frame inside the ROI.
    pub fn inside(&self) -> Vec<(usize, usize)> {
        self.mask.iter_set().collect()
    }

    /// Pixels of the reference frame outside the ROI.
    pub fn outside(&self) -> Vec<(usize, usize)> {
        self.mask.invert().iter_set().collect()
    }
}
