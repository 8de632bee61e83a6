//! Run configuration as flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional;
//! `preset` picks the defaults the remaining keys start from, regardless of
//! where it appears in the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::atlas_net::NetworkConfig;
use crate::error::{Result, RnaError};
use crate::flow_graph::{FlowFilters, DEFAULT_WINDOW};
use crate::refiner::RefineParams;
use crate::soft_recon::{default_radius, DEFAULT_EDIT_EPSILON};
use crate::trainer::{LossWeights, TrainSchedule};

/// Default sizes for networks, schedule and refinement batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full-size networks and schedules.
    Paper,
    /// Reduced networks and batches for CPU runs on small clips.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MattingKind {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub frames: PathBuf,
    pub roi: PathBuf,
    pub flows: PathBuf,
    /// Estimate flows by block matching instead of reading `flows`.
    pub builtin_flow: bool,
    pub block_match_radius: usize,
    /// Directory of `features_<t>.bin`; patch descriptors when absent.
    pub features: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub ref_frame: usize,
    pub flow_window: usize,
    pub filters: FlowFilters,
    pub network: NetworkConfig,
    pub weights: LossWeights,
    pub schedule: TrainSchedule,
    pub refine: RefineParams,
    /// `None` scales the radius with the frame size.
    pub erode_px: Option<usize>,
    pub dilate_px: Option<usize>,
    pub matting: MattingKind,
    /// Input mattes for the external backend.
    pub alpha_dir: Option<PathBuf>,
    pub edit_epsilon: f64,
    pub edited_atlas: Option<PathBuf>,
    /// Edited frames; `<work_dir>/edited` when absent.
    pub output: Option<PathBuf>,
    /// Ground truth used by `evaluate --mask-iou` and `--uv-drift`.
    pub gt_dir: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(preset: Preset) -> Self {
        let (network, schedule, refine) = match preset {
            Preset::Paper => (NetworkConfig::default(), TrainSchedule::default(), RefineParams::default()),
            Preset::Desk => (NetworkConfig::desk(), TrainSchedule::desk(), RefineParams::desk()),
        };
        Self {
            preset,
            frames: "frames".into(),
            roi: "roi.png".into(),
            flows: "flows".into(),
            builtin_flow: false,
            block_match_radius: 4,
            features: None,
            work_dir: "work".into(),
            ref_frame: 0,
            flow_window: DEFAULT_WINDOW,
            filters: FlowFilters::default(),
            network,
            weights: LossWeights::default(),
            schedule,
            refine,
            erode_px: None,
            dilate_px: None,
            matting: MattingKind::Builtin,
            alpha_dir: None,
            edit_epsilon: DEFAULT_EDIT_EPSILON,
            edited_atlas: None,
            output: None,
            gt_dir: None,
            seed: 0,
        }
    }

    /// Parses config text. Relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut order = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| RnaError::format(format!("config line {}: expected `key = value`", n + 1)))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(RnaError::format(format!("config line {}: duplicate key `{k}`", n + 1)));
            }
            order.push(k);
        }
        let mut cfg = match entries.get("preset") {
            Some(p) => Self::new(parse_preset(p)?),
            None => Self::new(Preset::Paper),
        };
        for p in [&mut cfg.frames, &mut cfg.roi, &mut cfg.flows, &mut cfg.work_dir] {
            *p = base.join(&*p);
        }
        for k in order.iter().filter(|k| *k != "preset") {
            cfg.set(k, &entries[k], base)?;
        }
        Ok(cfg)
    }

    /// Reads `path`, then applies `overrides` (paths relative to the working directory).
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                RnaError::NotFound(format!("config file {}", path.display()))
            } else {
                RnaError::io(path, e)
            }
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::parse(&text, base)?;
        if let Some((_, p)) = overrides.iter().rev().find(|(k, _)| k == "preset") {
            // a preset override resets the defaults, so replay the file on top
            let mut lines: Vec<&str> = text
                .lines()
                .filter(|l| l.split_once('=').is_none_or(|(k, _)| k.trim() != "preset"))
                .collect();
            let line = format!("preset = {p}");
            lines.push(&line);
            cfg = Self::parse(&lines.join("\n"), base)?;
        }
        for (k, v) in overrides.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v, Path::new(""))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || base.join(value);
        let opt_path = || (value != "none").then(|| base.join(value));
        let w = &mut self.weights;
        let s = &mut self.schedule;
        let r = &mut self.refine;
        match key {
            "preset" => {
                if parse_preset(value)? != self.preset {
                    return Err(RnaError::format("preset can only be chosen before other keys"));
                }
            }
            "frames" => self.frames = path(),
            "roi" => self.roi = path(),
            "flows" => self.flows = path(),
            "builtin_flow" => self.builtin_flow = parse(key, value)?,
            "block_match_radius" => self.block_match_radius = parse(key, value)?,
            "features" => self.features = opt_path(),
            "work_dir" => self.work_dir = path(),
            "ref_frame" => self.ref_frame = parse(key, value)?,
            "flow_window" => self.flow_window = parse(key, value)?,
            "cycle_threshold" => self.filters.cycle_threshold_px = parse(key, value)?,
            "appearance_threshold" => self.filters.appearance_threshold = parse_opt(key, value)?,
            "hash_levels" => self.network.hash.n_levels = parse(key, value)?,
            "hash_features" => self.network.hash.features_per_level = parse(key, value)?,
            "hash_log2_table" => self.network.hash.log2_table_size = parse(key, value)?,
            "hash_base_resolution" => self.network.hash.base_resolution = parse(key, value)?,
            "hash_scale" => self.network.hash.per_level_scale = parse(key, value)?,
            "n_layers" => self.network.n_layers = parse(key, value)?,
            "mask_width" => self.network.mask_width = parse(key, value)?,
            "atlas_width" => self.network.atlas_width = parse(key, value)?,
            "mapping_width" => self.network.mapping_width = parse(key, value)?,
            "illum_width" => self.network.illum_width = parse(key, value)?,
            "lambda_rigid" => w.rigid = parse(key, value)?,
            "lambda_pos" => w.pos = parse(key, value)?,
            "lambda_corr_ref" => w.corr_ref = parse(key, value)?,
            "lambda_corr_adj" => w.corr_adj = parse(key, value)?,
            "lambda_mask_bce" => w.mask_bce = parse(key, value)?,
            "lambda_mask_ref" => w.mask_ref = parse(key, value)?,
            "lambda_mask_adj" => w.mask_adj = parse(key, value)?,
            "lambda_illum" => w.illum = parse(key, value)?,
            "bootstrap_iters" => s.bootstrap_iters = parse(key, value)?,
            "main_iters" => s.main_iters = parse(key, value)?,
            "batch_size" => s.batch_size = parse(key, value)?,
            "lr_mlp" => s.lr_mlp = parse(key, value)?,
            "lr_hash" => s.lr_hash = parse(key, value)?,
            "lr_final_ratio" => s.lr_final_ratio = parse(key, value)?,
            "log_every" => s.log_every = parse(key, value)?,
            "checkpoint_every" => s.checkpoint_every = parse(key, value)?,
            "grad_clip" => s.grad_clip = parse(key, value)?,
            "tau" => r.tau = parse(key, value)?,
            "lambda_no1" => r.lambda_no1 = parse(key, value)?,
            "lambda_no2" => r.lambda_no2 = parse(key, value)?,
            "refine_iters" => r.iters = parse(key, value)?,
            "refine_batch_size" => r.batch_size = parse(key, value)?,
            "refine_lr_mlp" => r.lr_mlp = parse(key, value)?,
            "refine_lr_hash" => r.lr_hash = parse(key, value)?,
            "refine_lr_final_ratio" => r.lr_final_ratio = parse(key, value)?,
            "refine_log_every" => r.log_every = parse(key, value)?,
            "atlas_resolution" => r.atlas_resolution = parse(key, value)?,
            "erode_px" => self.erode_px = parse_auto(key, value)?,
            "dilate_px" => self.dilate_px = parse_auto(key, value)?,
            "matting" => {
                self.matting = match value {
                    "builtin" => MattingKind::Builtin,
                    "external" => MattingKind::External,
                    _ => return Err(RnaError::format(format!("matting must be builtin or external, got `{value}`"))),
                }
            }
            "alpha_dir" => self.alpha_dir = opt_path(),
            "edit_epsilon" => self.edit_epsilon = parse(key, value)?,
            "edited_atlas" => self.edited_atlas = opt_path(),
            "output" => self.output = opt_path(),
            "gt_dir" => self.gt_dir = opt_path(),
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(RnaError::format(format!("unknown config key `{key}`"))),
        }
        if key == "seed" {
            self.schedule.seed = self.seed;
            self.refine.seed = self.seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.weights.validate()?;
        self.schedule.validate()?;
        self.refine.validate()?;
        if self.flow_window == 0 {
            return Err(RnaError::contract("flow_window must be positive"));
        }
        if !(self.edit_epsilon >= 0.0) {
            return Err(RnaError::contract("edit_epsilon must be non-negative"));
        }
        if self.erode_px == Some(0) || self.dilate_px == Some(0) {
            return Err(RnaError::contract("trimap radii must be positive"));
        }
        if self.matting == MattingKind::External && self.alpha_dir.is_none() {
            return Err(RnaError::contract("matting = external needs alpha_dir"));
        }
        Ok(())
    }

    /// Erosion and dilation radii for a `width x height` video.
    pub fn trimap_radii(&self, width: usize, height: usize) -> (usize, usize) {
        let d = default_radius(width, height);
        (self.erode_px.unwrap_or(d), self.dilate_px.unwrap_or(d))
    }

    /// Every key with its current value, parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let p = |p: &Path| p.display().to_string();
        let o = |p: &Option<PathBuf>| p.as_deref().map_or("none".to_string(), |p| p.display().to_string());
        let auto = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        let (n, w, s, r) = (&self.network, &self.weights, &self.schedule, &self.refine);
        let rows: Vec<(&str, String)> = vec![
            ("preset", match self.preset { Preset::Paper => "paper", Preset::Desk => "desk" }.into()),
            ("frames", p(&self.frames)),
            ("roi", p(&self.roi)),
            ("flows", p(&self.flows)),
            ("builtin_flow", self.builtin_flow.to_string()),
            ("block_match_radius", self.block_match_radius.to_string()),
            ("features", o(&self.features)),
            ("work_dir", p(&self.work_dir)),
            ("ref_frame", self.ref_frame.to_string()),
            ("flow_window", self.flow_window.to_string()),
            ("cycle_threshold", self.filters.cycle_threshold_px.to_string()),
            ("appearance_threshold", self.filters.appearance_threshold.map_or("none".into(), |v| v.to_string())),
            ("hash_levels", n.hash.n_levels.to_string()),
            ("hash_features", n.hash.features_per_level.to_string()),
            ("hash_log2_table", n.hash.log2_table_size.to_string()),
            ("hash_base_resolution", n.hash.base_resolution.to_string()),
            ("hash_scale", n.hash.per_level_scale.to_string()),
            ("n_layers", n.n_layers.to_string()),
            ("mask_width", n.mask_width.to_string()),
            ("atlas_width", n.atlas_width.to_string()),
            ("mapping_width", n.mapping_width.to_string()),
            ("illum_width", n.illum_width.to_string()),
            ("lambda_rigid", w.rigid.to_string()),
            ("lambda_pos", w.pos.to_string()),
            ("lambda_corr_ref", w.corr_ref.to_string()),
            ("lambda_corr_adj", w.corr_adj.to_string()),
            ("lambda_mask_bce", w.mask_bce.to_string()),
            ("lambda_mask_ref", w.mask_ref.to_string()),
            ("lambda_mask_adj", w.mask_adj.to_string()),
            ("lambda_illum", w.illum.to_string()),
            ("bootstrap_iters", s.bootstrap_iters.to_string()),
            ("main_iters", s.main_iters.to_string()),
            ("batch_size", s.batch_size.to_string()),
            ("lr_mlp", s.lr_mlp.to_string()),
            ("lr_hash", s.lr_hash.to_string()),
            ("lr_final_ratio", s.lr_final_ratio.to_string()),
            ("log_every", s.log_every.to_string()),
            ("checkpoint_every", s.checkpoint_every.to_string()),
            ("grad_clip", s.grad_clip.to_string()),
            ("tau", r.tau.to_string()),
            ("lambda_no1", r.lambda_no1.to_string()),
            ("lambda_no2", r.lambda_no2.to_string()),
            ("refine_iters", r.iters.to_string()),
            ("refine_batch_size", r.batch_size.to_string()),
            ("refine_lr_mlp", r.lr_mlp.to_string()),
            ("refine_lr_hash", r.lr_hash.to_string()),
            ("refine_lr_final_ratio", r.lr_final_ratio.to_string()),
            ("refine_log_every", r.log_every.to_string()),
            ("atlas_resolution", r.atlas_resolution.to_string()),
            ("erode_px", auto(self.erode_px)),
            ("dilate_px", auto(self.dilate_px)),
            ("matting", match self.matting { MattingKind::Builtin => "builtin", MattingKind::External => "external" }.into()),
            ("alpha_dir", o(&self.alpha_dir)),
            ("edit_epsilon", self.edit_epsilon.to_string()),
            ("edited_atlas", o(&self.edited_atlas)),
            ("output", o(&self.output)),
            ("gt_dir", o(&self.gt_dir)),
            ("seed", self.seed.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn parse_preset(v: &str) -> Result<Preset> {
    match v {
        "paper" => Ok(Preset::Paper),
        "desk" => Ok(Preset::Desk),
        _ => Err(RnaError::format(format!("preset must be paper or desk, got `{v}`"))),
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| RnaError::format(format!("bad value `{v}` for `{key}`")))
}

fn parse_opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn parse_auto(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}
