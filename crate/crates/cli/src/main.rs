use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rna_core::config::RunConfig;
use rna_core::pipeline::{self, EvalRequest};
use rna_core::{Result, RnaError};

/// ROI neural atlas video editing.
#[derive(Parser)]
#[command(name = "rna", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Config overrides as `--key value` pairs, e.g. `--main-iters 100`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0.., value_name = "OVERRIDES")]
    rest: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Compose and filter flows, write pairs and bootstrap masks.
    Prepare(Common),
    /// Bootstrap the mask, then train all networks.
    Train(Common),
    /// Refine the mask of the trained networks.
    Refine(Common),
    /// Render the atlas image.
    RenderAtlas(Common),
    /// Compute soft masks for every frame.
    Matte(Common),
    /// Propagate an edited atlas into the video. Needs `--edited-atlas <png>`.
    Reconstruct(Common),
    /// Print metrics as `key = value` lines.
    Evaluate {
        #[arg(long)]
        roi_psnr: bool,
        #[arg(long)]
        mask_iou: bool,
        #[arg(long)]
        uv_drift: bool,
        #[command(flatten)]
        common: Common,
    },
}

const METRIC_FLAGS: [&str; 3] = ["roi-psnr", "mask-iou", "uv-drift"];

/// Splits trailing `--key value` words into overrides and metric flags.
fn split_rest(rest: &[String]) -> Result<(Vec<(String, String)>, Vec<String>)> {
    let mut overrides = Vec::new();
    let mut flags = Vec::new();
    let mut it = rest.iter();
    while let Some(word) = it.next() {
        let key = word
            .strip_prefix("--")
            .ok_or_else(|| RnaError::contract(format!("expected `--key value`, got `{word}`")))?;
        if METRIC_FLAGS.contains(&key) {
            flags.push(key.to_string());
            continue;
        }
        let value = it
            .next()
            .ok_or_else(|| RnaError::contract(format!("override `--{key}` needs a value")))?;
        overrides.push((key.replace('-', "_"), value.clone()));
    }
    Ok((overrides, flags))
}

fn load(common: &Common) -> Result<(RunConfig, Vec<String>)> {
    let (overrides, flags) = split_rest(&common.rest)?;
    Ok((RunConfig::load(&common.config, &overrides)?, flags))
}

fn no_flags(flags: &[String]) -> Result<()> {
    match flags.first() {
        Some(f) => Err(RnaError::contract(format!("--{f} is only valid for evaluate"))),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            let (cfg, flags) = load(&c)?;
            no_flags(&flags)?;
            let s = pipeline::prepare(&cfg)?;
            println!("reference_pairs = {}", s.reference_pairs);
            println!("adjacent_pairs = {}", s.adjacent_pairs);
        }
        Command::Train(c) => {
            let (cfg, flags) = load(&c)?;
            no_flags(&flags)?;
            let recs = pipeline::train(&cfg)?;
            println!("records = {}", recs.len());
            if let Some(r) = recs.last() {
                println!("final_roi_psnr = {}", r.psnr_roi);
            }
        }
        Command::Refine(c) => {
            let (cfg, flags) = load(&c)?;
            no_flags(&flags)?;
            println!("records = {}", pipeline::refine(&cfg)?);
        }
        Command::RenderAtlas(c) => {
            let (cfg, flags) = load(&c)?;
            no_flags(&flags)?;
            println!("atlas = {}", pipeline::render_atlas(&cfg)?.display());
        }
        Command::Matte(c) => {
            let (cfg, flags) = load(&c)?;
            no_flags(&flags)?;
            println!("frames = {}", pipeline::matte(&cfg)?.len());
        }
        Command::Reconstruct(c) => {
            let (cfg, flags) = load(&c)?;
            no_flags(&flags)?;
            println!("output = {}", pipeline::reconstruct(&cfg)?.display());
        }
        Command::Evaluate {
            roi_psnr,
            mask_iou,
            uv_drift,
            common,
        } => {
            let (cfg, flags) = load(&common)?;
            let has = |f: &str| flags.iter().any(|g| g == f);
            let mut req = EvalRequest {
                roi_psnr: roi_psnr || has("roi-psnr"),
                mask_iou: mask_iou || has("mask-iou"),
                uv_drift: uv_drift || has("uv-drift"),
            };
            if req == EvalRequest::default() {
                req.roi_psnr = true;
            }
            for (k, v) in pipeline::evaluate(&cfg, req)? {
                println!("{k} = {v}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
