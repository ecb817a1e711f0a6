//! `lrfr`: generate data, train, and run the diagnostics from the shell.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "lrfr", version, about = "Cross-resolution metric learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct Common {
    /// Experiment configuration (INI). Defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Override every seed in the configuration.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Comma-separated resolutions in px (default: from the config).
    #[arg(long, value_name = "CSV", value_delimiter = ',')]
    pub resolutions: Option<Vec<usize>>,
    /// Number of verification pairs (default: from the config).
    #[arg(long, value_name = "N")]
    pub pairs: Option<usize>,
    /// Name used in report file names (default: the checkpoint's directory).
    #[arg(long, value_name = "NAME")]
    pub model_id: Option<String>,
}

#[derive(Clone, Debug, Args)]
pub struct AugmentArgs {
    /// PNG image to degrade.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "CSV", value_delimiter = ',', default_value = "7,14,20")]
    pub resolutions: Vec<usize>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct GradCheckArgs {
    /// First seed.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, value_name = "N", default_value_t = 100)]
    pub seeds: u64,
    /// Also write the full report as JSON into this directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic identity dataset to PNGs plus a manifest.
    GenData(Common),
    /// Train a model; writes checkpoints, the step log and the resolved config.
    Train(TrainArgs),
    /// Verification accuracy and similarity overlap per resolution.
    Eval(ModelArgs),
    /// Verification accuracy sweep over resolutions.
    SweepAccuracy(ModelArgs),
    /// Gradient-norm sweep over resolutions.
    SweepGradnorm(ModelArgs),
    /// Positive/negative similarity histograms per resolution.
    SimHist(ModelArgs),
    /// Per-dimension HR/LR embedding error per resolution.
    DimError(ModelArgs),
    /// 2-D PCA of HR and degraded embeddings of the eval split.
    Pca(ModelArgs),
    /// Degrade one image; report SSIM and difficulty tier per resolution.
    Augment(AugmentArgs),
    /// Finite-difference check of every loss and the network.
    GradCheck(GradCheckArgs),
}

fn init_threads() -> Result<(), String> {
    let n = match std::env::var("LRFR_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("LRFR_THREADS must be a positive integer, got `{v}`"))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
