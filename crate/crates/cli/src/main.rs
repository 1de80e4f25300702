//! `posefuse`: generate synthetic multi-camera data, fuse and refine poses,
//! score them, and run the desync and view-count ablations.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use posefuse_core::fusion::WeightStrategy;
use posefuse_core::synth::MotionKind;

#[derive(Parser, Debug)]
#[command(name = "posefuse", version, about = "Occlusion-aware multi-view 3D pose fusion")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true, env = "POSEFUSE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Fuse, refine and score one or more sequences.
    Run(RunArgs),
    /// Score a poses file against a sequence's ground truth.
    Evaluate(EvaluateArgs),
    /// Error versus number of desynchronized cameras.
    AblateDesync(AblateArgs),
    /// Error versus number of available cameras.
    AblateViews(AblateArgs),
    /// Side-by-side table of several summary files.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub cameras: usize,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 3)]
    pub occluded_views: usize,
    /// Detection noise, pixels.
    #[arg(long)]
    pub sigma_2d: Option<f64>,
    /// Per-joint prediction noise, mm.
    #[arg(long)]
    pub sigma_3d: Option<f64>,
    /// Extra noise on occluded joints, mm.
    #[arg(long)]
    pub sigma_occ: Option<f64>,
    #[arg(long)]
    pub occluded_joint_fraction: Option<f64>,
    #[arg(long)]
    pub drop_prob: Option<f64>,
    /// Disable every corruption source.
    #[arg(long)]
    pub noise_free: bool,
    #[arg(long, default_value = "sinusoidal")]
    pub motion: MotionKind,
    /// Camera ring radius, meters.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Sequence name; files are written as `<label>.jsonl` and `<label>.manifest.json`.
    #[arg(long, default_value = "synthetic")]
    pub label: String,
}

#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Dataset directory holding cameras.json, an optional convention.json and `*.jsonl` sequences.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub convention: Option<PathBuf>,
    /// Sequence file; repeatable. The file stem is used as the label.
    #[arg(long)]
    pub sequence: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct MethodArgs {
    #[arg(long)]
    pub weights_strategy: Option<WeightStrategy>,
    #[arg(long)]
    pub lambda_sym: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Skip refinement and report the fused poses.
    #[arg(long)]
    pub no_optimize: bool,
    /// Camera ids to remove before processing, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub drop_cameras: Vec<String>,
    /// Also score frames whose desync offsets were clamped.
    #[arg(long)]
    pub include_boundary: bool,
    /// Exclude the pelvis from the root-relative error.
    #[arg(long)]
    pub exclude_pelvis: bool,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub method: MethodArgs,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Poses file as written by `run`.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub include_boundary: bool,
    #[arg(long)]
    pub exclude_pelvis: bool,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub method: MethodArgs,
}

#[derive(Args, Debug, Clone)]
pub struct CompareArgs {
    /// Summary CSV files produced by `run` or `evaluate`.
    #[arg(required = true, num_args = 2..)]
    pub summaries: Vec<PathBuf>,
    /// Compare root-relative instead of absolute error.
    #[arg(long)]
    pub relative: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
