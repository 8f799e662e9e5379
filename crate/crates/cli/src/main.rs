//! `ganprint`: generate fingerprinted datasets, train and evaluate
//! attribution networks, attack them and report fingerprint separability.

mod commands;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ganprint::tensor::TensorError;
use ganprint::Error;
use log::error;

#[derive(Debug, Parser)]
#[command(name = "ganprint", version, about = "Source fingerprint attribution toolkit")]
pub struct Cli {
    /// Single-threaded numerics and fixed reduction order (recorded in sidecars).
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset of fingerprinted sources.
    Gen(GenArgs),
    /// Train an attribution network.
    Train(TrainArgs),
    /// Evaluate a trained network (and optionally the baselines) on a dataset.
    Eval(EvalArgs),
    /// Write an attacked copy of a dataset.
    Attack(AttackArgs),
    /// Finetune a network on attacked training images.
    Immunize(ImmunizeArgs),
    /// Train the fingerprint visualization network and write its report.
    Visualize(VisualizeArgs),
    /// FD ratio of raw-pixel or network features.
    Fdratio(FdRatioArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of classes, including the `real` class unless `--no-real`.
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fingerprint pattern amplitude.
    #[arg(long, default_value_t = ganprint::synth::DEFAULT_AMPLITUDE)]
    pub amplitude: f64,
    /// Sharpening strength applied by every source before its pattern.
    #[arg(long, default_value_t = 0.0)]
    pub filter_strength: f64,
    /// Base-image pool; train and test pools never share base images.
    #[arg(long, value_enum, default_value_t = PoolArg::Train)]
    pub pool: PoolArg,
    /// Every class is a fingerprinted source.
    #[arg(long)]
    pub no_real: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// full | predown:R | residual:R | postpool:R
    #[arg(long, default_value = "full")]
    pub arch: String,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 128)]
    pub max_channels: usize,
    /// JSON with optional `arch` and `train` objects replacing the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; metadata goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Training set for the kNN, Eigenface and PRNU baselines.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub knn_k: usize,
    #[arg(long, default_value_t = ganprint::baselines::DEFAULT_EIGEN_COMPONENTS)]
    pub eigen_components: usize,
    /// Seed of the half splits behind the intra-class FD.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackSelect {
    /// Full attack spec, e.g. `crop:min=0.05,max=0.20,seed=3`.
    #[arg(long, conflicts_with_all = ["kind", "variance"])]
    pub spec: Option<String>,
    /// noise | blur | crop | jpeg | relight | combo
    #[arg(long)]
    pub kind: Option<String>,
    /// Attack seed (with `--kind`).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Read noise levels as variances instead of standard deviations.
    #[arg(long)]
    pub variance: bool,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub attack: AttackSelect,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImmunizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Clean training set; attacked copies are drawn every epoch.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub attack: AttackSelect,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub train_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out set for the report; defaults to `--data`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON with optional `vis` (network config) and `hyper` objects.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureKind {
    /// Grayscale pixels.
    Raw,
    /// Penultimate features of `--model`.
    Model,
}

#[derive(Debug, Args)]
pub struct FdRatioArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = FeatureKind::Raw)]
    pub features: FeatureKind,
    #[arg(long, required_if_eq("features", "model"))]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Io(_) => 3,
        Error::Format(_) => 4,
        Error::Numerical(_) | Error::DegenerateNorm(_) => 5,
        Error::Tensor(TensorError::NonFinite(_) | TensorError::DegenerateNorm(_)) => 5,
        Error::Tensor(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
