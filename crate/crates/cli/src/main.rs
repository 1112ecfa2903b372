//! `camdiffuse` command-line front end.
//!
//! Exit codes: 0 on success, 1 on internal failure, 2 on bad usage or input.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use camdiffuse::diffusion::{DEFAULT_STEPS, DEFAULT_TOP_K};
use camdiffuse::random_walk::{DEFAULT_BETA, DEFAULT_RW_STEPS};

#[derive(Debug, Parser)]
#[command(name = "camdiffuse", version, about = "Attention-diffused class activation maps")]
struct Cli {
    /// Worker threads; 0 lets the pool pick one per core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Diffuse each labeled class map over the refined attention.
    Adcam(AdcamArgs),
    /// Write vanilla class activation maps.
    Cam(InputArgs),
    /// Write the refined attention of each image in CSR form.
    RefineAtt(RefineArgs),
    /// Score stored maps against ground-truth masks over a threshold grid.
    Eval(EvalArgs),
    /// Best-threshold scores over a grid of top-k and step counts.
    Sweep(SweepArgs),
    /// Generate a synthetic dataset.
    GenSynth(SynthArgs),
    /// Refine AD-CAM maps with a boundary-gated random walk.
    RwRefine(RwArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct InputArgs {
    /// Manifest files, image directories, or directories of image directories.
    #[arg(required = false)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct DiffusionArgs {
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Keep the raw diffused activations instead of dividing by the peak.
    #[arg(long)]
    no_renormalize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
struct AdcamArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    diffusion: DiffusionArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct RefineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct EvalArgs {
    /// Manifests carrying the ground-truth masks.
    #[arg(required = false)]
    inputs: Vec<PathBuf>,
    /// Output directory of `adcam`, `cam` or `rw-refine`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = "0.01:0.99:0.01")]
    thresholds: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20, 50, 100])]
    k_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 6, 8])]
    t_values: Vec<usize>,
    #[arg(long, default_value = "0.01:0.99:0.01")]
    thresholds: String,
    /// Also draw `sensitivity.svg`.
    #[arg(long)]
    plot: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SynthArgs {
    /// JSON generator parameters; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the seed given in the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the image count given in the spec.
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct RwArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    diffusion: DiffusionArgs,
    /// Boundary map for a single input; otherwise each manifest's own.
    #[arg(long)]
    boundary: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RW_STEPS)]
    rw_steps: usize,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAMDIFFUSE_LOG", "warn")).init();
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| commands::run(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
