use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "steerid", version, about = "Driver identification from steering-wheel time series")]
pub struct Cli {
    /// Worker threads for parallel stages. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fleet (trip CSVs plus manifest).
    Synth(SynthArgs),
    /// Clean and resample every trip of a fleet.
    Ingest(IngestArgs),
    /// Unit-root tests, correlated lags and the window recommendation.
    Stationarity(StationarityArgs),
    /// Train the GRU on the train pool and evaluate it on the test pool.
    Train(TrainArgs),
    /// Evaluate a saved model on the test pool.
    Evaluate(EvaluateArgs),
    /// Retrain for every window size and report accuracy per window.
    Sweep(SweepArgs),
    /// Decision-forest baseline on window summary statistics.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Key-value file (`key = value` per line); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub drivers: Option<usize>,
    #[arg(long)]
    pub trips_per_driver: Option<usize>,
    #[arg(long)]
    pub trip_min_minutes: Option<f64>,
    #[arg(long)]
    pub trip_max_minutes: Option<f64>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub jitter_ms: Option<f64>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub gps_outage_rate: Option<f64>,
    #[arg(long)]
    pub min_separation_hz: Option<f64>,
    #[arg(long)]
    pub pole_radius: Option<f64>,
    #[arg(long)]
    pub resonance_min_hz: Option<f64>,
    #[arg(long)]
    pub resonance_max_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetArg {
    Separable,
    Hard,
}

#[derive(Debug, Args, Serialize)]
pub struct IoArgs {
    /// Fleet directory holding `manifest.csv`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct StationarityArgs {
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ProtocolArgs {
    #[arg(long, default_value_t = 240.0)]
    pub train_min: f64,
    #[arg(long, default_value_t = 30.0)]
    pub test_min: f64,
    #[arg(long, default_value_t = 15.0)]
    pub segment_min: f64,
    /// Use only the first N drivers (by id).
    #[arg(long)]
    pub drivers: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationArg {
    Sigmoid,
    Tanh,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "sigmoid")]
    pub candidate_activation: ActivationArg,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
    #[arg(long, default_value_t = 0.7)]
    pub keep_prob: f64,
    /// Step budget.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 25)]
    pub eval_every: usize,
    /// Evaluations without improvement before stopping early.
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.5)]
    pub window_s: f64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Split seed; use the one given to `train`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    FinalVote,
    MeanOverVotes,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[arg(long)]
    pub seed: u64,
    /// Comma-separated window sizes in seconds; 2.5 to 10 by 0.5 when absent.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<f64>>,
    #[arg(long, default_value_t = 7)]
    pub repetitions: usize,
    /// Drivers drawn at random for each repetition; all when absent.
    #[arg(long)]
    pub drivers_per_set: Option<usize>,
    #[arg(long, value_enum, default_value = "mean-over-votes")]
    pub metric: MetricArg,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.5)]
    pub window_s: f64,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 12)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_node: usize,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}
