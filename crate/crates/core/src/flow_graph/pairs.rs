use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Result, RnaError};
use crate::media_io::{BinaryMask, PixelCoord, RoiSpec, VideoGeometry};

use super::compose::{ChainDirection, HopCache, RefFlowSet};

const PAIRS_MAGIC: &[u8; 8] = b"RNAPAIRS";
const PAIRS_VERSION: u32 = 1;

/// A correspondence from an integer pixel to a subpixel landing position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrPair {
    pub src_x: u32,
    pub src_y: u32,
    pub src_t: u32,
    pub dst_x: f32,
    pub dst_y: f32,
    pub dst_t: u32,
}

impl CorrPair {
    pub fn src_coord(&self, g: &VideoGeometry) -> PixelCoord {
        g.normalize_subpixel(self.src_x as f64, self.src_y as f64, self.src_t as usize)
    }

    pub fn dst_coord(&self, g: &VideoGeometry) -> PixelCoord {
        g.normalize_subpixel(self.dst_x as f64, self.dst_y as f64, self.dst_t as usize)
    }

    pub fn src_point(&self, g: &VideoGeometry) -> [f64; 3] {
        let c = self.src_coord(g);
        [c.x, c.y, c.t]
    }

    pub fn dst_point(&self, g: &VideoGeometry) -> [f64; 3] {
        let c = self.dst_coord(g);
        [c.x, c.y, c.t]
    }
}

/// Pairs to the reference frame (`reference`) and to adjacent frames (`adjacent`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSets {
    pub reference: Vec<CorrPair>,
    pub adjacent: Vec<CorrPair>,
}

fn in_bounds(g: &VideoGeometry, x: f64, y: f64) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (g.width - 1) as f64 && y <= (g.height - 1) as f64
}

/// Collects `(p, p + F_{t->r}(p))` for every valid composed pixel and
/// `(p, p + f_{t->t+-1}(p))` for every valid filtered adjacent hop.
pub fn build_pairs(
    ref_flows: &RefFlowSet,
    hops: &mut HopCache,
    geometry: &VideoGeometry,
) -> Result<CorrespondenceSets> {
    if ref_flows.direction != ChainDirection::ToReference {
        return Err(RnaError::contract("pairs need flows composed toward the reference"));
    }
    if ref_flows.n_frames() != geometry.n_frames {
        return Err(RnaError::contract(format!(
            "{} composed flows for {} frames",
            ref_flows.n_frames(),
            geometry.n_frames
        )));
    }
    let r = ref_flows.ref_frame;
    let (w, h) = (geometry.width, geometry.height);
    let mut out = CorrespondenceSets::default();
    for t in 0..geometry.n_frames {
        if t == r {
            continue;
        }
        let f = ref_flows.flow(t);
        for y in 0..h {
            for x in 0..w {
                if let Some((u, v)) = f.get(x, y) {
                    let (tx, ty) = (x as f64 + u, y as f64 + v);
                    if in_bounds(geometry, tx, ty) {
                        out.reference.push(CorrPair {
                            src_x: x as u32,
                            src_y: y as u32,
                            src_t: t as u32,
                            dst_x: tx as f32,
                            dst_y: ty as f32,
                            dst_t: r as u32,
                        });
                    }
                }
            }
        }
    }
    for t in 0..geometry.n_frames {
        let neighbors = [t.checked_sub(1), Some(t + 1).filter(|&n| n < geometry.n_frames)];
        for tn in neighbors.into_iter().flatten() {
            let f = hops.hop(t, tn)?;
            for y in 0..h {
                for x in 0..w {
                    if let Some((u, v)) = f.get(x, y) {
                        let (tx, ty) = (x as f64 + u, y as f64 + v);
                        if in_bounds(geometry, tx, ty) {
                            out.adjacent.push(CorrPair {
                                src_x: x as u32,
                                src_y: y as u32,
                                src_t: t as u32,
                                dst_x: tx as f32,
                                dst_y: ty as f32,
                                dst_t: tn as u32,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Forward-splats the reference ROI along `F_{r->t}` with nearest-pixel
/// assignment. Pixels that receive nothing stay unset.
pub fn bootstrap_masks(from_ref: &RefFlowSet, roi: &RoiSpec) -> Result<Vec<BinaryMask>> {
    if from_ref.direction != ChainDirection::FromReference {
        return Err(RnaError::contract("bootstrap masks need flows composed from the reference"));
    }
    if from_ref.ref_frame != roi.ref_frame {
        return Err(RnaError::contract(format!(
            "flows anchored at frame {}, ROI drawn on frame {}",
            from_ref.ref_frame, roi.ref_frame
        )));
    }
    let (w, h) = (roi.mask.width, roi.mask.height);
    let mut masks = Vec::with_capacity(from_ref.n_frames());
    for f in &from_ref.flows {
        if f.width != w || f.height != h {
            return Err(RnaError::contract("flow and ROI mask differ in size"));
        }
        let mut m = BinaryMask::new(w, h);
        for (x, y) in roi.mask.iter_set() {
            if let Some((u, v)) = f.get(x, y) {
                let tx = (x as f64 + u).round();
                let ty = (y as f64 + v).round();
                if tx >= 0.0 && ty >= 0.0 && tx < w as f64 && ty < h as f64 {
                    m.set(tx as usize, ty as usize, true);
                }
            }
        }
        masks.push(m);
    }
    Ok(masks)
}

fn write_pairs(out: &mut Vec<u8>, pairs: &[CorrPair]) {
    out.write_u64::<LittleEndian>(pairs.len() as u64).unwrap();
    for p in pairs {
        out.write_u32::<LittleEndian>(p.src_x).unwrap();
        out.write_u32::<LittleEndian>(p.src_y).unwrap();
        out.write_u32::<LittleEndian>(p.src_t).unwrap();
        out.write_f32::<LittleEndian>(p.dst_x).unwrap();
        out.write_f32::<LittleEndian>(p.dst_y).unwrap();
        out.write_u32::<LittleEndian>(p.dst_t).unwrap();
    }
}

fn read_pairs(input: &mut &[u8], g: &VideoGeometry) -> Result<Vec<CorrPair>> {
    let trunc = |_| RnaError::format("pair file truncated");
    let n = input.read_u64::<LittleEndian>().map_err(trunc)? as usize;
    if n.saturating_mul(24) > input.len() {
        return Err(RnaError::format("pair file truncated"));
    }
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let p = CorrPair {
            src_x: input.read_u32::<LittleEndian>().map_err(trunc)?,
            src_y: input.read_u32::<LittleEndian>().map_err(trunc)?,
            src_t: input.read_u32::<LittleEndian>().map_err(trunc)?,
            dst_x: input.read_f32::<LittleEndian>().map_err(trunc)?,
            dst_y: input.read_f32::<LittleEndian>().map_err(trunc)?,
            dst_t: input.read_u32::<LittleEndian>().map_err(trunc)?,
        };
        let ok = (p.src_x as usize) < g.width
            && (p.src_y as usize) < g.height
            && (p.src_t as usize) < g.n_frames
            && (p.dst_t as usize) < g.n_frames
            && in_bounds(g, p.dst_x as f64, p.dst_y as f64);
        if !ok {
            return Err(RnaError::format("pair file holds an out-of-bounds pair"));
        }
        pairs.push(p);
    }
    Ok(pairs)
}

impl CorrespondenceSets {
    pub fn to_bytes(&self, g: &VideoGeometry) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PAIRS_MAGIC);
        out.write_u32::<LittleEndian>(PAIRS_VERSION).unwrap();
        for v in [g.width, g.height, g.n_frames] {
            out.write_u32::<LittleEndian>(v as u32).unwrap();
        }
        write_pairs(&mut out, &self.reference);
        write_pairs(&mut out, &self.adjacent);
        out
    }

    pub fn from_bytes(mut bytes: &[u8], g: &VideoGeometry) -> Result<Self> {
        let mut magic = [0u8; 8];
        bytes
            .read_exact(&mut magic)
            .map_err(|_| RnaError::format("pair file truncated"))?;
        if &magic != PAIRS_MAGIC {
            return Err(RnaError::format("pair file has wrong magic"));
        }
        let trunc = |_| RnaError::format("pair file truncated");
        let version = bytes.read_u32::<LittleEndian>().map_err(trunc)?;
        if version != PAIRS_VERSION {
            return Err(RnaError::format(format!("unsupported pair file version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = bytes.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        }
        if dims != [g.width, g.height, g.n_frames] {
            return Err(RnaError::format(format!(
                "pair file was built for {}x{}x{}, video is {}x{}x{}",
                dims[0], dims[1], dims[2], g.width, g.height, g.n_frames
            )));
        }
        let reference = read_pairs(&mut bytes, g)?;
        let adjacent = read_pairs(&mut bytes, g)?;
        if !bytes.is_empty() {
            return Err(RnaError::format("trailing bytes in pair file"));
        }
        Ok(Self {
            reference,
            adjacent,
        })
    }

    pub fn save(&self, path: &Path, g: &VideoGeometry) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| RnaError::io(path, e))?;
        f.write_all(&self.to_bytes(g)).map_err(|e| RnaError::io(path, e))
    }

    pub fn load(path: &Path, g: &VideoGeometry) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                RnaError::NotFound(path.display().to_string())
            } else {
                RnaError::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes, g)
    }
}
