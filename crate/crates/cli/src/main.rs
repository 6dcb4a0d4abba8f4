mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ganf_core::model::Mode;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Bad flags, config or paths; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(name = "ganf", version, about = "Graph-augmented normalizing flows for multiple time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with a known DAG and labeled anomalies.
    Synth(SynthArgs),
    /// Train a model and write checkpoint, history and resolved config.
    Train(TrainArgs),
    /// Score every window of a series file with a checkpoint.
    Score(ScoreArgs),
    /// ROC/AUC and log-density histogram for a scores file.
    Eval(EvalArgs),
    /// Thresholded learned graph as DOT and JSON.
    ExportGraph(ExportArgs),
    /// Time one training iteration over a grid of (n, T).
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Synthetic spec JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Label granularity (disjoint windows of this length).
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Series CSV; overrides `data` in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the training window length.
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Smooth labels around anomaly onsets.
    #[arg(long)]
    pub smoothed: bool,
    /// Smoothing width in steps; implies --smoothed.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Repeat for an edge-weight table across checkpoints.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Grid JSON with `n`, `t`, `d`, `batch`, `iters`, `train`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated node counts.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Comma-separated window lengths.
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("GANF_THREADS") {
        let k: usize = v.trim().parse().ok().filter(|&k| k > 0).ok_or_else(|| {
            Usage(format!("GANF_THREADS must be a positive integer, got `{v}`"))
        })?;
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<Usage>() || matches!(e.downcast_ref::<ganf_core::Error>(), Some(ganf_core::Error::Config(_)))
    });
    if usage { 2 } else { 1 }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Score(a) => commands::score(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportGraph(a) => commands::export_graph(a),
        Command::Bench(a) => commands::bench(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
