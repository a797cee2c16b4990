//! `driftforge` command-line entry point.
//!
//! Exit codes: 0 success, 2 validation or input error, 3 numerical abort.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "driftforge", version, about = "Memristor drift simulation, drift GANs and learned quantizers")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true, env = "DRIFTFORGE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for every random stream of the run.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a drift dataset.
    GenDataset(GenDatasetArgs),
    /// Compute normalization statistics of a dataset.
    Stats(StatsArgs),
    /// Train the drift GAN.
    Train(TrainArgs),
    /// Evaluation protocols.
    Eval {
        #[command(subcommand)]
        kind: EvalKind,
    },
    /// Optimize one quantization scheme.
    Quantize(QuantizeArgs),
    /// Optimize and evaluate schemes over bit widths and delays.
    QuantizeSweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub count: Option<usize>,
    /// Series length in seconds.
    #[arg(long)]
    pub ttot: Option<f64>,
    /// Sampling interval in seconds.
    #[arg(long)]
    pub tsample: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    /// Train without the delay discriminator.
    #[arg(long)]
    pub ablation_no_dd: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from a checkpoint; its config is kept apart from `--epochs`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Gan,
    Oracle,
    Both,
    Dataset,
}

#[derive(Debug, Args)]
pub struct EvalCommon {
    #[command(flatten)]
    pub common: Common,
    /// Trained checkpoint; not needed for oracle-only runs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON grid overriding the `eval` section of the config.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum EvalKind {
    /// Mean change after a fixed total delay reached with different step sizes.
    Consistency(EvalCommon),
    /// Final-resistance moments per (initial resistance, delay) cell.
    Moments {
        #[command(flatten)]
        args: EvalCommon,
        /// Defaults to `both` with a checkpoint and `oracle` without.
        #[arg(long, value_enum)]
        source: Option<SourceArg>,
    },
    /// Histograms of final resistances.
    Histogram {
        #[command(flatten)]
        args: EvalCommon,
        #[arg(long, value_enum)]
        source: Option<SourceArg>,
        /// Dataset CSV for `--source dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Closed-loop generated series.
    Series {
        #[command(flatten)]
        args: EvalCommon,
        #[arg(long)]
        delay: Option<f64>,
        #[arg(long)]
        per_init: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub levels: usize,
    #[arg(long)]
    pub delay: f64,
    /// Monte Carlo trials per level for the reported errors.
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Bit widths, e.g. `1..4` or `1,2,3`.
    #[arg(long, default_value = "1..4")]
    pub bits: String,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    pub delays: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<driftforge::Error>())
        .any(driftforge::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenDataset(a) => commands::gen_dataset(a),
        Command::Stats(a) => commands::stats(a),
        Command::Train(a) => commands::train(a),
        Command::Eval { kind } => commands::eval(kind),
        Command::Quantize(a) => commands::quantize(a),
        Command::QuantizeSweep(a) => commands::quantize_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
