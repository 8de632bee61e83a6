//! Pipeline stages. Each stage reads its inputs from the config and the work
//! directory and writes its outputs back to the work directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::atlas_net::{load_checkpoint, save_checkpoint, AtlasNetworks};
use crate::config::{MattingKind, RunConfig};
use crate::error::{Result, RnaError};
use crate::flow_graph::{
    bootstrap_masks, build_pairs, compose_from_reference, compose_to_reference, AppearanceDescriptor,
    BlockMatchProvider, CorrespondenceSets, FileDescriptor, FileFlowProvider, FlowProvider, HopCache,
    PatchDescriptor,
};
use crate::media_io::{load_atlas, load_frames, save_atlas, save_frames, BinaryMask, RoiSpec, VideoClip, VideoGeometry};
use crate::metrics::{median, occlusion_iou, roi_psnr, uv_drift};
use crate::refiner::{find_candidates, refine as refine_mask, warp_roi_to_atlas};
use crate::soft_recon::{
    reconstruct_edit, soft_masks, BuiltinMatting, EditBundle, ExternalMatting, MattingBackend, SoftMaskStack,
};
use crate::trainer::{bootstrap, train as train_nets, MetricRecord, TrainSink};

/// File layout of a work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkDir {
    pub root: PathBuf,
}

impl WorkDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs.bin")
    }

    pub fn bootstrap_dir(&self) -> PathBuf {
        self.root.join("bootstrap")
    }

    pub fn bootstrap_mask(&self, t: usize) -> PathBuf {
        self.bootstrap_dir().join(format!("mask_{t}.png"))
    }

    pub fn checkpoint_train(&self) -> PathBuf {
        self.root.join("checkpoint_train.bin")
    }

    pub fn periodic_checkpoint(&self, iter: usize) -> PathBuf {
        self.root.join(format!("checkpoint_train_{iter}.bin"))
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn checkpoint_refined(&self) -> PathBuf {
        self.root.join("checkpoint_refined.bin")
    }

    pub fn metrics_refine(&self) -> PathBuf {
        self.root.join("metrics_refine.jsonl")
    }

    pub fn candidates_dir(&self) -> PathBuf {
        self.root.join("candidates")
    }

    pub fn atlas(&self) -> PathBuf {
        self.root.join("atlas.png")
    }

    pub fn alpha_dir(&self) -> PathBuf {
        self.root.join("alpha")
    }

    pub fn edited_dir(&self) -> PathBuf {
        self.root.join("edited")
    }

    fn ensure(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| RnaError::io(&self.root, e))
    }

    /// The refined checkpoint when refinement has run, else the trained one.
    pub fn latest_checkpoint(&self) -> Result<AtlasNetworks> {
        for p in [self.checkpoint_refined(), self.checkpoint_train()] {
            if p.is_file() {
                return load_checkpoint(&p);
            }
        }
        Err(RnaError::NotFound(format!(
            "no checkpoint in {}; run `rna train` first",
            self.root.display()
        )))
    }
}

pub fn load_inputs(cfg: &RunConfig) -> Result<(VideoClip, RoiSpec)> {
    let clip = load_frames(&cfg.frames)?;
    if !cfg.roi.is_file() {
        return Err(RnaError::NotFound(format!("ROI mask {}", cfg.roi.display())));
    }
    let mask = BinaryMask::load(&cfg.roi)?;
    let roi = RoiSpec::new(cfg.ref_frame, mask, &clip.geometry())?;
    Ok((clip, roi))
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(RnaError::NotFound(format!("{}; run `rna {stage}` first", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareSummary {
    pub reference_pairs: usize,
    pub adjacent_pairs: usize,
}

/// Flows, composition, filtering, pairs and bootstrap masks.
pub fn prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    let (clip, roi) = load_inputs(cfg)?;
    let g = clip.geometry();
    let ws = WorkDir::new(&cfg.work_dir);
    let block;
    let files;
    let provider: &dyn FlowProvider = if cfg.builtin_flow {
        block = BlockMatchProvider::new(&clip, cfg.block_match_radius);
        &block
    } else {
        files = FileFlowProvider::new(&cfg.flows, g.width, g.height);
        let missing = files.missing_files(g.n_frames, cfg.flow_window);
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(8).map(String::as_str).collect();
            return Err(RnaError::NotFound(format!(
                "{} flow files missing from {} (e.g. {}{}); provide them or set builtin_flow = true",
                missing.len(),
                cfg.flows.display(),
                shown.join(", "),
                if missing.len() > shown.len() { ", ..." } else { "" }
            )));
        }
        &files
    };
    let patch = PatchDescriptor::new(&clip);
    let file_desc = cfg.features.as_ref().map(|d| FileDescriptor::new(d, g.width, g.height));
    let desc: &dyn AppearanceDescriptor = match &file_desc {
        Some(d) => d,
        None => &patch,
    };
    let mut hops = HopCache::new(provider, Some(desc), cfg.filters);
    let r = cfg.ref_frame;
    let to = compose_to_reference(&mut hops, g.n_frames, g.width, g.height, r, cfg.flow_window)?;
    let from = compose_from_reference(&mut hops, g.n_frames, g.width, g.height, r, cfg.flow_window)?;
    let corr = build_pairs(&to, &mut hops, &g)?;
    let masks = bootstrap_masks(&from, &roi)?;
    ws.ensure()?;
    corr.save(&ws.pairs(), &g)?;
    let bdir = ws.bootstrap_dir();
    fs::create_dir_all(&bdir).map_err(|e| RnaError::io(&bdir, e))?;
    for (t, m) in masks.iter().enumerate() {
        m.save(&ws.bootstrap_mask(t))?;
    }
    log::info!("{} reference pairs, {} adjacent pairs", corr.reference.len(), corr.adjacent.len());
    Ok(PrepareSummary {
        reference_pairs: corr.reference.len(),
        adjacent_pairs: corr.adjacent.len(),
    })
}

/// Writes one JSON object per line.
struct JsonLines {
    out: BufWriter<File>,
    path: PathBuf,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(|e| RnaError::io(&path, e))?;
        Ok(Self { out: BufWriter::new(f), path })
    }

    fn write(&mut self, value: &impl Serialize) -> Result<()> {
        let line = serde_json::to_string(value).map_err(|e| RnaError::format(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| RnaError::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| RnaError::io(&self.path, e))
    }
}

struct StageSink<'a> {
    log: JsonLines,
    ws: &'a WorkDir,
}

impl TrainSink for StageSink<'_> {
    fn metrics(&mut self, r: &MetricRecord) -> Result<()> {
        log::info!("iter {} recon {:.6} roi psnr {:.2}", r.iter, r.l_recon, r.psnr_roi);
        self.log.write(r)
    }

    fn checkpoint(&mut self, iter: usize, nets: &AtlasNetworks) -> Result<()> {
        save_checkpoint(nets, &self.ws.periodic_checkpoint(iter))
    }
}

fn load_prepared(ws: &WorkDir, g: &VideoGeometry) -> Result<(CorrespondenceSets, Vec<BinaryMask>)> {
    require(&ws.pairs(), "prepare")?;
    let corr = CorrespondenceSets::load(&ws.pairs(), g)?;
    let masks = (0..g.n_frames)
        .map(|t| {
            let p = ws.bootstrap_mask(t);
            require(&p, "prepare")?;
            BinaryMask::load(&p)
        })
        .collect::<Result<_>>()?;
    Ok((corr, masks))
}

/// Mask bootstrapping followed by the main optimization.
pub fn train(cfg: &RunConfig) -> Result<Vec<MetricRecord>> {
    let (clip, roi) = load_inputs(cfg)?;
    let g = clip.geometry();
    let ws = WorkDir::new(&cfg.work_dir);
    let (corr, masks) = load_prepared(&ws, &g)?;
    let mut nets = AtlasNetworks::new(cfg.network, g, cfg.seed)?;
    if cfg.schedule.bootstrap_iters > 0 {
        let bce = bootstrap(&mut nets, &masks, &cfg.schedule)?;
        log::info!("bootstrap cross-entropy {bce:.5}");
    }
    let mut sink = StageSink {
        log: JsonLines::create(ws.metrics())?,
        ws: &ws,
    };
    let records = train_nets(&mut nets, &clip, &roi, &corr, &cfg.weights, &cfg.schedule, &mut sink)?;
    sink.log.finish()?;
    save_checkpoint(&nets, &ws.checkpoint_train())?;
    Ok(records)
}

/// Mask refinement from the trained checkpoint.
pub fn refine(cfg: &RunConfig) -> Result<usize> {
    let (clip, roi) = load_inputs(cfg)?;
    let g = clip.geometry();
    let ws = WorkDir::new(&cfg.work_dir);
    require(&ws.checkpoint_train(), "train")?;
    let mut nets = load_checkpoint(&ws.checkpoint_train())?;
    let (corr, _) = load_prepared(&ws, &g)?;
    let atlas_roi = warp_roi_to_atlas(&roi, &nets, cfg.refine.atlas_resolution)?;
    let cand = find_candidates(&clip, &nets, &atlas_roi, cfg.refine.tau)?;
    let cdir = ws.candidates_dir();
    fs::create_dir_all(&cdir).map_err(|e| RnaError::io(&cdir, e))?;
    atlas_roi.save(&cdir.join("atlas_roi.png"))?;
    for (t, (pot, no)) in cand.pot_masks(&g).iter().zip(cand.no_masks(&g)).enumerate() {
        pot.save(&cdir.join(format!("pot_{t}.png")))?;
        no.save(&cdir.join(format!("no_{t}.png")))?;
    }
    log::info!("{} potential and {} visible candidates", cand.p_pot.len(), cand.p_no.len());
    let mut log = JsonLines::create(ws.metrics_refine())?;
    let recs = refine_mask(&mut nets, &clip, &cand, &corr, &cfg.refine, |r| log.write(r))?;
    log.finish()?;
    save_checkpoint(&nets, &ws.checkpoint_refined())?;
    Ok(recs.len())
}

pub fn render_atlas(cfg: &RunConfig) -> Result<PathBuf> {
    let ws = WorkDir::new(&cfg.work_dir);
    let nets = ws.latest_checkpoint()?;
    let atlas = nets.render_atlas(cfg.refine.atlas_resolution)?;
    let path = ws.atlas();
    save_atlas(&atlas, &path)?;
    Ok(path)
}

/// Soft masks for every frame, written to `alpha/`.
pub fn matte(cfg: &RunConfig) -> Result<SoftMaskStack> {
    let clip = load_frames(&cfg.frames)?;
    let ws = WorkDir::new(&cfg.work_dir);
    let nets = ws.latest_checkpoint()?;
    let (e, d) = cfg.trimap_radii(clip.width(), clip.height());
    let backend: Box<dyn MattingBackend> = match cfg.matting {
        MattingKind::Builtin => Box::new(BuiltinMatting::for_radii(e, d)),
        MattingKind::External => Box::new(ExternalMatting {
            dir: cfg
                .alpha_dir
                .clone()
                .ok_or_else(|| RnaError::contract("matting = external needs alpha_dir"))?,
        }),
    };
    let stack = soft_masks(&clip, &nets, e, d, backend.as_ref())?;
    stack.save(&ws.alpha_dir())?;
    Ok(stack)
}

/// Applies `edited_atlas` to every frame and writes the result.
pub fn reconstruct(cfg: &RunConfig) -> Result<PathBuf> {
    let edited_path = cfg
        .edited_atlas
        .as_ref()
        .ok_or_else(|| RnaError::contract("reconstruct needs edited_atlas (e.g. --edited-atlas edit.png)"))?;
    let clip = load_frames(&cfg.frames)?;
    let ws = WorkDir::new(&cfg.work_dir);
    let nets = ws.latest_checkpoint()?;
    require(&ws.atlas(), "render-atlas")?;
    let render = load_atlas(&ws.atlas())?;
    let edited = load_atlas(edited_path)?;
    require(&ws.alpha_dir(), "matte")?;
    let soft = SoftMaskStack::load(&ws.alpha_dir(), clip.n_frames())?;
    let bundle = EditBundle::new(&render, edited, soft, cfg.edit_epsilon)?;
    let frames = reconstruct_edit(&clip, &nets, &bundle)?;
    let out = cfg.output.clone().unwrap_or_else(|| ws.edited_dir());
    save_frames(&frames, &out)?;
    Ok(out)
}

/// Analytic ground truth for a synthetic clip.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Per frame: reference ROI pixels tracked into the frame.
    pub tracked: Vec<BinaryMask>,
    /// Per frame: tracked pixels hidden by an occluder.
    pub occluded: Vec<BinaryMask>,
    /// `(x, y, t) -> (x_r, y_r, r)` pixel pairs.
    pub pairs: Vec<([usize; 3], [usize; 3])>,
}

impl GroundTruth {
    pub fn tracked_file(t: usize) -> String {
        format!("tracked_{t}.png")
    }

    pub fn occluded_file(t: usize) -> String {
        format!("occluded_{t}.png")
    }

    pub const PAIRS_FILE: &'static str = "pairs.txt";

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| RnaError::io(dir, e))?;
        for (t, (a, b)) in self.tracked.iter().zip(&self.occluded).enumerate() {
            a.save(&dir.join(Self::tracked_file(t)))?;
            b.save(&dir.join(Self::occluded_file(t)))?;
        }
        let mut text = String::new();
        for (a, b) in &self.pairs {
            text.push_str(&format!("{} {} {} {} {} {}\n", a[0], a[1], a[2], b[0], b[1], b[2]));
        }
        let p = dir.join(Self::PAIRS_FILE);
        fs::write(&p, text).map_err(|e| RnaError::io(&p, e))
    }

    pub fn load_masks(dir: &Path, n_frames: usize) -> Result<(Vec<BinaryMask>, Vec<BinaryMask>)> {
        let load = |name: String| {
            let p = dir.join(name);
            if !p.is_file() {
                return Err(RnaError::NotFound(format!("ground-truth mask {}", p.display())));
            }
            BinaryMask::load(&p)
        };
        let tracked = (0..n_frames).map(|t| load(Self::tracked_file(t))).collect::<Result<_>>()?;
        let occluded = (0..n_frames).map(|t| load(Self::occluded_file(t))).collect::<Result<_>>()?;
        Ok((tracked, occluded))
    }

    pub fn load_pairs(dir: &Path, g: &VideoGeometry) -> Result<Vec<([usize; 3], [usize; 3])>> {
        let p = dir.join(Self::PAIRS_FILE);
        let text = fs::read_to_string(&p).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                RnaError::NotFound(format!("ground-truth pairs {}", p.display()))
            } else {
                RnaError::io(&p, e)
            }
        })?;
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| RnaError::format(format!("{} line {}: expected integers", p.display(), n + 1)))?;
            if v.len() != 6 {
                return Err(RnaError::format(format!("{} line {}: expected 6 values", p.display(), n + 1)));
            }
            for (x, y, t) in [(v[0], v[1], v[2]), (v[3], v[4], v[5])] {
                g.normalize(x, y, t)?;
            }
            out.push(([v[0], v[1], v[2]], [v[3], v[4], v[5]]));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalRequest {
    pub roi_psnr: bool,
    pub mask_iou: bool,
    pub uv_drift: bool,
}

/// Metrics of the latest checkpoint as `(name, value)` rows.
pub fn evaluate(cfg: &RunConfig, req: EvalRequest) -> Result<Vec<(String, f64)>> {
    let (clip, roi) = load_inputs(cfg)?;
    let g = clip.geometry();
    let nets = WorkDir::new(&cfg.work_dir).latest_checkpoint()?;
    let gt = || {
        cfg.gt_dir
            .as_ref()
            .ok_or_else(|| RnaError::NotFound("this metric needs ground truth; set gt_dir".into()))
    };
    let mut rows = Vec::new();
    if req.roi_psnr {
        rows.push(("roi_psnr".to_string(), roi_psnr(&nets, &clip, &roi)?));
    }
    if req.mask_iou {
        let (tracked, occluded) = GroundTruth::load_masks(gt()?, g.n_frames)?;
        rows.push(("mask_iou".to_string(), occlusion_iou(&nets, &tracked, &occluded)?));
    }
    if req.uv_drift {
        let pairs = GroundTruth::load_pairs(gt()?, &g)?;
        let pts = pairs
            .iter()
            .map(|(a, b)| {
                let p = g.normalize(a[0], a[1], a[2])?;
                let q = g.normalize(b[0], b[1], b[2])?;
                Ok(([p.x, p.y, p.t], [q.x, q.y, q.t]))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = uv_drift(&nets, &pts)?;
        let med = median(&d).ok_or_else(|| RnaError::contract("no ground-truth pairs"))?;
        rows.push(("uv_drift_median".to_string(), med));
        rows.push(("uv_drift_mean".to_string(), d.iter().sum::<f64>() / d.len() as f64));
    }
    Ok(rows)
}
