use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phyloalive::{GammaPrior, Method};

#[derive(Debug, Parser)]
#[command(
    name = "phyloalive",
    version,
    about = "Particle-filter inference for birth-death phylogenetic models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a complete CRBD tree and its reconstruction.
    Simulate(SimulateArgs),
    /// Run a batch of filters and report evidence estimates and metrics.
    Infer(InferArgs),
    /// Build gamma-mixture rate posteriors from a delayed-sampling batch.
    Posterior(PosteriorArgs),
    /// Check both filters against exact answers on a toy model.
    Toycheck(ToycheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub mu: f64,
    /// Age of the single starting lineage.
    #[arg(long)]
    pub age: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Resimulate until exactly this many species are extant.
    #[arg(long)]
    pub leaves: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub max_tries: usize,
    #[arg(long, default_value = "complete.nwk")]
    pub complete: PathBuf,
    #[arg(long, default_value = "reconstructed.nwk")]
    pub reconstructed: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Crbd,
    Bisse,
    Lgss,
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    Immediate,
    Delayed,
    Fixed,
}

impl SamplingArg {
    pub fn name(self) -> &'static str {
        match self {
            SamplingArg::Immediate => "immediate",
            SamplingArg::Delayed => "delayed",
            SamplingArg::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Bpf,
    Apf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Bpf => Method::Bpf,
            MethodArg::Apf => Method::Apf,
        }
    }
}

/// Parses a gamma prior written as `shape,scale`.
fn parse_prior(s: &str) -> Result<GammaPrior, String> {
    let (k, theta) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `shape,scale`, got `{s}`"))?;
    let k: f64 = k.trim().parse().map_err(|e| format!("shape: {e}"))?;
    let theta: f64 = theta.trim().parse().map_err(|e| format!("scale: {e}"))?;
    GammaPrior::new(k, theta).map_err(|e| e.to_string())
}

/// Model selection and parameters shared by `infer` and `posterior`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Reconstructed tree in Newick format (crbd, bisse).
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Tip states as CSV with header `label,state` (bisse).
    #[arg(long)]
    pub states: Option<PathBuf>,
    /// Fixed speciation rate; two comma-separated values give per-state
    /// rates for bisse.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    /// Fixed extinction rate, as for `--lambda`.
    #[arg(long, value_delimiter = ',')]
    pub mu: Vec<f64>,
    /// Fixed state-switching rate (bisse).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_parser = parse_prior, default_value = "1,1")]
    pub prior_lambda: GammaPrior,
    #[arg(long, value_parser = parse_prior, default_value = "1,1")]
    pub prior_mu: GammaPrior,
    /// Defaults to shape 1 and scale 10 / (total branch length).
    #[arg(long, value_parser = parse_prior)]
    pub prior_sigma: Option<GammaPrior>,
    #[command(flatten)]
    pub toy: ToyArgs,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Number of checkpoints [default: 10 for lgss, 5 for indicator].
    #[arg(long)]
    pub steps: Option<usize>,
    /// LGSS state autoregression coefficient.
    #[arg(long, default_value_t = 0.9)]
    pub lgss_a: f64,
    /// Seed of the simulated LGSS observations.
    #[arg(long, default_value_t = 1)]
    pub obs_seed: u64,
    /// Indicator half-width.
    #[arg(long, default_value_t = 1.0)]
    pub half_width: f64,
    /// Indicator step variance.
    #[arg(long, default_value_t = 1.0)]
    pub step_var: f64,
    /// Indicator autoregression coefficient; 0 keeps the acceptance
    /// probability the same at every checkpoint.
    #[arg(long, default_value_t = 0.0)]
    pub ar: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "apf")]
    pub method: MethodArg,
    #[arg(short = 'N', long, default_value_t = 512)]
    pub particles: usize,
    #[arg(short = 'M', long, default_value_t = 100)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Propagation attempts per checkpoint before an alive filter gives up.
    #[arg(long, default_value_t = phyloalive::smc::DEFAULT_STARVATION_CAP)]
    pub starvation_cap: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "immediate")]
    pub sampling: SamplingArg,
    /// Add the exact evidence and the batch z-score to the summary (lgss).
    #[arg(long)]
    pub kalman_check: bool,
    /// Per-run CSV output.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Summary JSON output [default: stdout].
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Mixture components as CSV.
    #[arg(long, default_value = "mixture.csv")]
    pub out_csv: PathBuf,
    /// Per-rate mean and quantiles as CSV [default: stdout].
    #[arg(long)]
    pub out_summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ToyKind {
    Lgss,
    Indicator,
}

#[derive(Debug, Args)]
pub struct ToycheckArgs {
    #[arg(long, value_enum)]
    pub model: ToyKind,
    #[arg(short = 'N', long, default_value_t = 64)]
    pub particles: usize,
    #[arg(short = 'M', long, default_value_t = 10_000)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub starvation_cap: u64,
    #[command(flatten)]
    pub toy: ToyArgs,
}
