//! Command surface, configuration, dataset ingestion and orchestration.
//!
//! One subcommand per pipeline stage: `extract-stacks`, `train`, `predict`,
//! `filter`, `align`, `fuse`, `eval`, `stereo-gt`, `synth`, `ingest` and
//! `run`. Parameters come from a key/value config file plus `--set
//! key=value` overrides; `LFDEPTH_OUT_DIR` overrides the output directory.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod config;
mod ingest;
mod ops;

pub use config::{
    grid_calibration_from_kv, read_grid_calibration, read_rig_calibration, write_grid_calibration,
    write_rig_calibration, PipelineConfig, OUT_DIR_ENV,
};
pub use ingest::{ingest_lfs, read_split_manifest, IngestError, LfsCapture};
pub use ops::{
    align_op, eval_op, extract_stacks_op, filter_op, fuse_op, predict_op, read_depth_pfm,
    read_model_report, read_relative_pfm, run_op, stereo_gt_op, synth_op, train_op,
    write_depth_pfm, write_metric_disparity_pfm, write_model_report, write_relative_pfm,
};

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Stage failures carrying their exit-code category.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    /// Bad flags, missing required keys, invalid parameter values.
    Usage(String),
    /// Missing or malformed input files and assets.
    Data(String),
    /// Numeric failure inside a stage (degenerate fits, empty masks, ...).
    Numeric(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Usage(msg) => write!(f, "usage error: {msg}"),
            PipelineError::Data(msg) => write!(f, "data error: {msg}"),
            PipelineError::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl std::error::Error for PipelineError {}

/// Thin-lens parameters for converting manufacturer virtual depths to
/// metric depth. All three lengths are configuration inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThinLensParams {
    /// Main lens focal length, meters.
    pub main_focal_m: f64,
    /// Distance from the main lens to the MLA plane, meters.
    pub main_to_mla_m: f64,
    /// MLA-to-sensor spacing (the unit of virtual depth), meters.
    pub mla_to_sensor_m: f64,
}

impl ThinLensParams {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        ThinLensParams {
            main_focal_m: cfg.main_focal_m,
            main_to_mla_m: cfg.main_to_mla_m,
            mla_to_sensor_m: cfg.mla_to_sensor_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThinLensError {
    /// The virtual focus maps to an image-side distance at or inside the
    /// focal length; no finite object depth exists.
    BehindFocalPlane { image_distance_m: f64 },
}

impl fmt::Display for ThinLensError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThinLensError::BehindFocalPlane { image_distance_m } => write!(
                f,
                "image-side distance {image_distance_m} m does not exceed the focal length"
            ),
        }
    }
}

impl std::error::Error for ThinLensError {}

/// Relative guard against the thin-lens singularity at `a = f`.
const THIN_LENS_GUARD: f64 = 1e-9;

/// Converts a manufacturer virtual depth (in multiples of the MLA-to-sensor
/// spacing) to metric object depth through the thin-lens equation.
///
/// The virtual focus sits `v * mla_to_sensor_m` in front of the MLA, so its
/// image-side distance from the main lens is `a = D - v * B_s`; the object
/// depth follows from `1/f = 1/z + 1/a` as `z = f*a / (a - f)`.
pub fn virtual_to_metric(v: f64, p: &ThinLensParams) -> Result<f64, ThinLensError> {
    let f = p.main_focal_m;
    let a = p.main_to_mla_m - v * p.mla_to_sensor_m;
    if a <= f * (1.0 + THIN_LENS_GUARD) {
        return Err(ThinLensError::BehindFocalPlane { image_distance_m: a });
    }
    Ok(f * a / (a - f))
}

/// Inverse of [`virtual_to_metric`]; used by ingestion tests as the
/// round-trip oracle.
pub fn metric_to_virtual(z: f64, p: &ThinLensParams) -> f64 {
    let f = p.main_focal_m;
    let a = f * z / (z - f);
    (p.main_to_mla_m - a) / p.mla_to_sensor_m
}

#[derive(Parser)]
#[command(
    name = "lfdepth",
    about = "Single-shot dense metric depth from focused plenoptic cameras",
    version
)]
pub struct Cli {
    /// Key/value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable): --set key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (shorthand for --set out_dir=...).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Copy, Debug)]
pub enum Command {
    /// Debayer a raw plenoptic frame and build the flower-stack archive.
    ExtractStacks,
    /// Train the microlens depth network on stacks with ground truth.
    Train,
    /// Predict sparse metric depth from a weight file.
    Predict,
    /// Remove sparse samples over weakly textured stacks.
    Filter,
    /// Fit the relative-to-metric disparity model on sparse anchors.
    Align,
    /// Apply a fitted model to a relative map and emit dense metric depth.
    Fuse,
    /// Evaluate predictions against ground truth.
    Eval,
    /// Produce stereo ground truth reprojected onto the plenoptic pose.
    StereoGt,
    /// Generate a synthetic scene with exact ground truth.
    Synth,
    /// Validate and convert an LFS capture directory.
    Ingest,
    /// Run the full pipeline from one configuration.
    Run,
}

/// Builds the effective configuration from file, overrides and environment.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    let overrides = config::overrides_to_kv(&cli.set)?;
    cfg.apply_kv(&overrides)?;
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.apply_env();
    Ok(cfg)
}

/// Dispatches a parsed invocation.
pub fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = effective_config(cli)?;
    match cli.command {
        Command::ExtractStacks => ops::extract_stacks_op(&cfg).map(|_| ()),
        Command::Train => ops::train_op(&cfg).map(|_| ()),
        Command::Predict => ops::predict_op(&cfg).map(|_| ()),
        Command::Filter => ops::filter_op(&cfg).map(|_| ()),
        Command::Align => ops::align_op(&cfg).map(|_| ()),
        Command::Fuse => ops::fuse_op(&cfg).map(|_| ()),
        Command::Eval => ops::eval_op(&cfg).map(|_| ()),
        Command::StereoGt => ops::stereo_gt_op(&cfg).map(|_| ()),
        Command::Synth => ops::synth_op(&cfg).map(|_| ()),
        Command::Ingest => ingest::ingest_op(&cfg).map(|_| ()),
        Command::Run => ops::run_op(&cfg).map(|_| ()),
    }
}
