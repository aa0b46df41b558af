//! `daml`: reproducible runs of the ranking demo, training, the frontier
//! experiment, evaluation and data generation.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "daml", version, about = "Decision-aware training of count forecasters for top-K site selection")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Omit wall-clock timings from outputs so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean versus ratio ranking on the three-type demo.
    DemoAppb(DemoArgs),
    /// Train one model, or one per grid point.
    Train(TrainArgs),
    /// Likelihood, BPR and DAML models across a threshold grid.
    Pareto(ParetoArgs),
    /// Score a checkpoint or reference ranker on one split.
    Evaluate(EvalArgs),
    /// Write a synthetic panel as CSV.
    GenData(GenArgs),
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Forecast samples per trial.
    #[arg(long = "samples", short = 'M', default_value_t = 50_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3, 6])]
    pub ks: Vec<usize>,
    /// Output CSV (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config, or a manifest from an earlier `train` run.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Continue from a `state.params` file written by a previous run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    /// JSON config, or a manifest from an earlier `pareto` run.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated DAML thresholds; an empty string skips DAML.
    #[arg(long)]
    pub epsilons: Option<String>,
    #[arg(long)]
    pub test_trials: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    Chance,
    HistoricalAverage,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON config with the dataset and defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Panel CSV; replaces the config's dataset.
    #[arg(long)]
    pub data_csv: Option<PathBuf>,
    #[arg(long, conflicts_with = "baseline")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "samples", short = 'M')]
    pub samples: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Generator {
    Synthetic1d,
    Negbin,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub generator: Generator,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub sites: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub q_low: Option<f64>,
    #[arg(long)]
    pub q_high: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::DemoAppb(a) => commands::demo_appb(&a),
        Command::Train(a) => commands::train(&a, &cli.global),
        Command::Pareto(a) => commands::pareto(&a, &cli.global),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::GenData(a) => commands::gen_data(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
