//! `qtune`: builds corpora, trains level predictors and replays them against the
//! simulated store.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "qtune", version, about = "SLA-driven consistency level tuning on a simulated quorum store")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "qtune-out")]
    pub out: PathBuf,
    /// SLA file, or an inline `"latency_ms staleness_ms"` pair.
    #[arg(long, global = true, default_value = "250 5")]
    pub sla: String,
    /// Row of the SLA file to use (0-based).
    #[arg(long, global = true, default_value_t = 0)]
    pub sla_row: usize,
    /// Cluster configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Workload specification file.
    #[arg(long, global = true)]
    pub workload: Option<PathBuf>,
    /// Observation window in simulated milliseconds [default: 60000].
    #[arg(long, global = true)]
    pub window_ms: Option<f64>,
    /// Percentile of per-key staleness reported as a window's score.
    #[arg(long, global = true, default_value_t = 95.0)]
    pub percentile: f64,
    #[arg(long, global = true, value_enum, default_value_t = LearnerArg::Tree)]
    pub learner: LearnerArg,
    /// Constant extra one-way network delay, in milliseconds.
    #[arg(long, global = true)]
    pub inject_delay_ms: Option<f64>,
    #[command(flatten)]
    pub workload_flags: WorkloadFlags,
}

/// Overrides for individual workload fields.
#[derive(Args, Debug, Clone, Default)]
pub struct WorkloadFlags {
    #[arg(long, global = true)]
    pub read_proportion: Option<f64>,
    #[arg(long, global = true)]
    pub thread_count: Option<usize>,
    #[arg(long, global = true)]
    pub key_count: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub distribution: Option<DistributionArg>,
    #[arg(long, global = true)]
    pub zipfian_theta: Option<f64>,
    #[arg(long, global = true)]
    pub ops_per_thread: Option<usize>,
    #[arg(long, global = true)]
    pub think_time_us: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerArg {
    Tree,
    Forest,
    Logistic,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionArg {
    Uniform,
    Zipfian,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BicArg {
    /// `2 k ln N - 2 ln L`
    Printed,
    /// `k ln N - 2 ln L`
    Standard,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Runs every grid cell at every level and writes the training corpus.
    Corpus(commands::CorpusArgs),
    /// Labels a corpus, trains a learner and scores it.
    Train(commands::TrainArgs),
    /// Replays the predicted policy and every fixed level over a read-proportion sweep.
    Evaluate(commands::EvaluateArgs),
    /// Corpus, training and evaluation in one run.
    Sweep(commands::SweepArgs),
    /// Per-key staleness of a trace file, or of one simulated window.
    Gamma(commands::GammaArgs),
    /// Accuracy-speed tradeoff scores for (name, overhead, error) rows.
    PerfTable(commands::PerfArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corpus(a) => commands::corpus(&cli.common, &a),
        Command::Train(a) => commands::train(&cli.common, &a),
        Command::Evaluate(a) => commands::evaluate(&cli.common, &a),
        Command::Sweep(a) => commands::sweep(&cli.common, &a),
        Command::Gamma(a) => commands::gamma(&cli.common, &a),
        Command::PerfTable(a) => commands::perf_table(&cli.common, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qtune: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
