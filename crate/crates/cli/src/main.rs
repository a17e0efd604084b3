mod commands;
mod decompose;
mod output;
mod overrides;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] wavets_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn reason(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.reason(),
            CliError::Config(_) | CliError::Json(_) => "config",
            CliError::Data(_) | CliError::Io(_) | CliError::Csv(_) => "data",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "wavets", version, about = "Wavelet-domain lightweight forecasters")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that trains models. Any run-config key
/// can follow as `--key value`, e.g. `--lookback 720 --variant S`.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Flat JSON config; flags given after it win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds; one run per seed plus a mean±std summary.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0.., value_name = "--KEY VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train with early stopping and write a run directory per seed.
    Train(RunArgs),
    /// Re-evaluate a saved run on its test split.
    Eval {
        /// Run directory holding config.json and checkpoint.json.
        run: PathBuf,
        /// Evaluate on another CSV with the same channel count.
        #[arg(long)]
        data: Option<String>,
    },
    /// One run per grid cell over a shared data pipeline.
    Ablate {
        /// Cells: variants (B, S, M, I, LF, HF), `delta-fixed`, or filter banks (haar, d4, sym4, coif1).
        #[arg(long, default_value = "")]
        grid: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Dump wavelet bands of every CSV column, or rebuild a series from a dump.
    Decompose(decompose::DecomposeArgs),
    /// Parameter, MAC and timing rows for a set of variants.
    Benchmark(commands::BenchArgs),
    /// Test error as a function of lookback length.
    Sweep {
        /// Comma-separated lookback lengths.
        #[arg(long)]
        lengths: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a synthetic dataset to CSV.
    Synth(commands::SynthArgs),
    /// Aggregate report.csv files into a horizon × variant grid.
    Table(table::TableArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => commands::train(&args),
        Command::Eval { run, data } => commands::eval(&run, data),
        Command::Ablate { grid, run } => commands::ablate(&grid, &run),
        Command::Decompose(args) => decompose::run(&args),
        Command::Benchmark(args) => commands::benchmark(&args),
        Command::Sweep { lengths, run } => commands::sweep(&lengths, &run),
        Command::Synth(args) => commands::synth(&args),
        Command::Table(args) => table::run(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: reason={} {message}", e.reason());
            ExitCode::from(2)
        }
    }
}
