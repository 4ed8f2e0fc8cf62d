use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgenas_core::estimator::Estimator;
use edgenas_core::search::{Algorithm, RewardMode};
use edgenas_core::study::BlockSpec;

#[derive(Debug, Parser)]
#[command(name = "edgenas", version, about = "Hardware-aware architecture search toolkit")]
pub struct Cli {
    /// Accelerator config (TOML); the built-in edgetpu-like preset when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for generated files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer latency breakdown of a model file.
    Estimate(EstimateArgs),
    /// Tile-level simulation of a model file.
    Simulate(SimulateArgs),
    /// Architecture search; writes history.csv and pareto.csv.
    Search(SearchArgs),
    /// Recompute the Pareto front of a search history.
    Pareto(ParetoArgs),
    /// Compare the analytical model against the simulator on random models.
    RmseStudy(StudyArgs),
    /// Latency ratio of two blocks over a shape sweep.
    Crossover(CrossoverArgs),
    /// Run the latency estimation service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorChoice {
    Apm,
    Sim,
    Service,
}

#[derive(Debug, Args)]
pub struct ServiceArgs {
    /// Base URL of a running service (for --estimator service).
    #[arg(long, env = "EDGENAS_SERVICE_URL")]
    pub service_url: Option<String>,
    /// Config name on the service; the server default when omitted.
    #[arg(long)]
    pub service_config: Option<String>,
    /// Estimator the service runs (apm or sim).
    #[arg(long, value_parser = parse_estimator, default_value = "apm")]
    pub service_estimator: Estimator,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Apm)]
    pub estimator: EstimatorChoice,
    /// Also write the breakdown as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Print the service's JSON response body instead of a table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub service: ServiceArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub target_latency_us: f64,
    #[arg(long, default_value_t = 500)]
    pub budget: usize,
    #[arg(long, value_parser = parse_algorithm, default_value = "evolution")]
    pub algo: Algorithm,
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Apm)]
    pub estimator: EstimatorChoice,
    #[arg(long, default_value_t = 64)]
    pub population: usize,
    #[arg(long, default_value_t = 16)]
    pub sample_size: usize,
    /// Latency exponent of the reward (non-positive).
    #[arg(long, default_value_t = -0.07, allow_hyphen_values = true)]
    pub exponent: f64,
    #[arg(long, value_parser = parse_mode, default_value = "soft")]
    pub mode: RewardMode,
    /// Search-space skeleton (TOML); the seven-stage default when omitted.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Standard deviation of the surrogate's per-model noise.
    #[arg(long, default_value_t = 0.003)]
    pub noise_sd: f64,
    /// CSV of known accuracies (genome_hash,accuracy); misses use the surrogate.
    #[arg(long)]
    pub accuracy_table: Option<PathBuf>,
    /// Seed of the surrogate's per-model noise; independent of --seed so
    /// that a model scores the same in every search.
    #[arg(long, default_value_t = 0)]
    pub surrogate_seed: u64,
    /// Fail on accuracy-table misses instead of falling back.
    #[arg(long, requires = "accuracy_table")]
    pub strict_table: bool,
    /// Also write pareto.svg.
    #[arg(long)]
    pub svg: bool,
    #[command(flatten)]
    pub service: ServiceArgs,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    /// A history.csv written by `search`.
    pub history: PathBuf,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct CrossoverArgs {
    /// Numerator block, e.g. fused_ibn, ibn:k5, conv:k3.
    #[arg(long, default_value = "fused_ibn:k3")]
    pub a: BlockSpec,
    /// Denominator block.
    #[arg(long, default_value = "ibn:k3")]
    pub b: BlockSpec,
    /// Comma-separated square input sizes.
    #[arg(long, value_parser = parse_list, default_value = "7,14,28,56,112")]
    pub hw: UintList,
    #[arg(long, value_parser = parse_list, default_value = "2,4,8,16,32,64,128,256")]
    pub cin: UintList,
    #[arg(long, value_parser = parse_list, default_value = "16,64,256")]
    pub cout: UintList,
    #[arg(long, value_parser = parse_list, default_value = "1,3,6")]
    pub expansion: UintList,
    #[arg(long, default_value_t = 1)]
    pub stride: u32,
    #[arg(long, value_parser = parse_estimator, default_value = "apm")]
    pub estimator: Estimator,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "EDGENAS_PORT", default_value_t = edgenas_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    pub host: String,
    /// Extra named configs: every *.toml in this directory, named by file stem.
    #[arg(long, env = "EDGENAS_CONFIG_DIR")]
    pub config_dir: Option<PathBuf>,
    #[arg(long, default_value_t = edgenas_service::DEFAULT_MAX_BATCH)]
    pub max_batch: usize,
}

/// A comma-separated list given as one value. An empty value is an empty
/// list, so that an empty sweep can be reported as such.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UintList(pub Vec<u32>);

fn parse_list(text: &str) -> Result<UintList, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u32>().map_err(|_| format!("{s:?} is not a non-negative integer")))
        .collect::<Result<_, _>>()
        .map(UintList)
}

fn parse_estimator(text: &str) -> Result<Estimator, String> {
    text.parse()
}

fn parse_algorithm(text: &str) -> Result<Algorithm, String> {
    text.parse()
}

fn parse_mode(text: &str) -> Result<RewardMode, String> {
    match text {
        "soft" => Ok(RewardMode::Soft),
        "hard" => Ok(RewardMode::Hard),
        other => Err(format!("unknown reward mode {other:?} (expected soft or hard)")),
    }
}
