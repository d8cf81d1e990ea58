//! `salgail`: head-fixation saliency pipeline for omnidirectional images.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure, 4 config error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use salgail::env::FixationMode;
use salgail::trajectory::DEFAULT_IVT_THRESHOLD;
use serde::Serialize;

use config::Preset;

#[derive(Parser, Debug, Serialize)]
#[command(name = "salgail", version, about = "Head-fixation saliency prediction on omnidirectional images")]
pub struct Cli {
    /// Random seed. Required by train and simulate.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. 1 runs everything sequentially.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Command {
    /// Label raw head-movement logs as fixations or saccades.
    Ivt(IvtArgs),
    /// Render fixation saliency maps from labeled logs.
    Salmap(SalmapArgs),
    /// Score predicted maps against ground truth.
    Eval(EvalArgs),
    /// Train the multi-stream imitation model.
    Train(TrainArgs),
    /// Predict saliency maps with a trained model.
    Simulate(SimulateArgs),
    /// Consistency, center-bias and movement-magnitude statistics.
    Findings(FindingsArgs),
    /// Generate synthetic corpora.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args, Debug, Serialize)]
pub struct IvtArgs {
    /// Directory of `<image>__s<subject>.csv` logs.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Velocity threshold in deg/s.
    #[arg(long, default_value_t = DEFAULT_IVT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct FcbArgs {
    /// Skip the center-bias fusion.
    #[arg(long)]
    pub no_fcb: bool,
    /// Center-bias weight relative to the fixation map's maximum.
    #[arg(long)]
    pub fcb_weight: Option<f64>,
    #[arg(long)]
    pub fcb_sigma_lon: Option<f64>,
    #[arg(long)]
    pub fcb_sigma_lat: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct SalmapArgs {
    /// Directory of labeled logs.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[command(flatten)]
    pub fcb: FcbArgs,
    /// Fit the center-bias widths to all fixations in the input.
    #[arg(long)]
    pub fit_fcb: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Predicted maps (`<image>.f32`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth maps (`<image>.f32`).
    #[arg(long)]
    pub gt: PathBuf,
    /// Labeled logs supplying the fixations for NSS and AUC.
    #[arg(long)]
    pub fixations: PathBuf,
    /// Metrics CSV.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Corpus manifest, e.g. from `synth experts`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Training log CSV; defaults to the checkpoint path with `.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// JSON file of hyperparameter overrides (environment fields under "env").
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, repeatable; `env.` prefixes environment fields.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Load color images as three channels.
    #[arg(long)]
    pub rgb: bool,
    /// Print a progress line every N cycles (0 = never).
    #[arg(long, default_value_t = 50)]
    pub progress: usize,
    /// Print the effective configuration and exit without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
pub enum FixationArg {
    All,
    Stay,
}

impl From<FixationArg> for FixationMode {
    fn from(f: FixationArg) -> Self {
        match f {
            FixationArg::All => FixationMode::AllSteps,
            FixationArg::Stay => FixationMode::StayOnly,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of `.png` / `.f32` images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub fcb: FcbArgs,
    /// Which rollout positions count as fixations.
    #[arg(long, value_enum, default_value_t = FixationArg::All)]
    pub fixations: FixationArg,
    /// Also write `<image>_rollouts.csv`.
    #[arg(long)]
    pub rollouts: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct FindingsArgs {
    /// Directory of labeled logs.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Random splits per image for the consistency curve.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 180)]
    pub width: usize,
    #[arg(long, default_value_t = 90)]
    pub height: usize,
    /// Magnitude histogram bin width in degrees.
    #[arg(long, default_value_t = 0.5)]
    pub bin: f64,
    /// Magnitude histogram range in degrees.
    #[arg(long, default_value_t = 20.0)]
    pub max_deg: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
pub enum ExpertTask {
    /// Experts head for a bright blob by different routes.
    Blob,
    /// One expert always moves east, the other stays.
    EastStay,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum SynthCommand {
    /// Blob panoramas with scripted expert trajectories and a manifest.
    Experts(SynthExpertsArgs),
    /// Raw logs with known fixation/saccade labels.
    Ivt(SynthIvtArgs),
    /// Labeled fixation logs drawn to shared attractors.
    Attractor(SynthAttractorArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SynthExpertsArgs {
    #[arg(long)]
    pub output: PathBuf,
    /// Number of experts (streams).
    #[arg(long, default_value_t = 2)]
    pub experts: usize,
    #[arg(long, value_enum, default_value_t = ExpertTask::Blob)]
    pub task: ExpertTask,
    /// Training images.
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    /// Held-out images, written to `heldout.json`.
    #[arg(long, default_value_t = 5)]
    pub held_out: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Expert trajectory length in steps.
    #[arg(long, default_value_t = salgail::env::DEFAULT_HORIZON)]
    pub steps: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthIvtArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub subjects: u32,
    #[arg(long, default_value_t = 2)]
    pub images: usize,
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    /// Sampling interval in milliseconds.
    #[arg(long, default_value_t = 100.0)]
    pub dt_ms: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthAttractorArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub subjects: u32,
    #[arg(long, default_value_t = 4)]
    pub images: usize,
    #[arg(long, default_value_t = 30)]
    pub fixations: usize,
}

fn exit_code(err: &salgail::Error) -> u8 {
    use salgail::Error::*;
    match err {
        Numerical(_) => 3,
        Config(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
