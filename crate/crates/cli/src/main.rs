//! `soh-klstm`: generate synthetic cycling data, train LSTM/KLSTM models,
//! evaluate and export predictions.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use soh_klstm::data::Profile;

use crate::config::RunOptions;

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
/// 3 training diverged.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] soh_klstm::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "soh-klstm", version, about = "Battery state-of-health prediction with LSTM and spline-augmented LSTM cells")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cycling CSV
    Gen {
        /// groupA, groupB or groupC
        #[arg(long)]
        profile: Profile,
        #[arg(long, default_value_t = 170)]
        cycles: usize,
        #[arg(long, default_value_t = config::DEFAULT_SEED)]
        seed: u64,
        /// Nominal capacity in Ah
        #[arg(long, default_value_t = 2.0)]
        nominal: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint and training report
    Train {
        /// Flat TOML config; flags override its values
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOptions,
        /// Checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// Report path (default: checkpoint path with `.report.txt`)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test partition of a CSV
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Architecture options given here must match the checkpoint
        #[command(flatten)]
        opts: RunOptions,
        /// Baseline RMSE for the error-reduction line
        #[arg(long)]
        baseline_rmse: Option<f64>,
        /// Report path (default: checkpoint path with `.eval.txt`)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-cycle predictions for one partition
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOptions,
        /// train, val or test
        #[arg(long, default_value = "test")]
        partition: String,
        /// Prediction CSV
        #[arg(long)]
        out: PathBuf,
        /// Optional whitespace-separated file for gnuplot
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Train an LSTM and a KLSTM on the same data and seed and compare them
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOptions,
        /// Directory for both checkpoints, reports and compare.csv
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            profile,
            cycles,
            seed,
            nominal,
            out,
        } => commands::gen(profile, cycles, seed, nominal, &out),
        Command::Train {
            config,
            opts,
            out,
            report,
        } => {
            let opts = RunOptions::resolve(config.as_deref(), opts)?;
            let report = report.unwrap_or_else(|| commands::default_report_path(&out));
            commands::train(&opts, &out, &report).map(|_| ())
        }
        Command::Eval {
            checkpoint,
            config,
            opts,
            baseline_rmse,
            out,
        } => {
            let opts = RunOptions::resolve(config.as_deref(), opts)?;
            let out = out.unwrap_or_else(|| checkpoint.with_extension("eval.txt"));
            commands::eval(&opts, &checkpoint, baseline_rmse, &out)
        }
        Command::Predict {
            checkpoint,
            config,
            opts,
            partition,
            out,
            plot,
        } => {
            let opts = RunOptions::resolve(config.as_deref(), opts)?;
            commands::predict(&opts, &checkpoint, &partition, &out, plot.as_deref())
        }
        Command::Compare { config, opts, out_dir } => {
            let opts = RunOptions::resolve(config.as_deref(), opts)?;
            commands::compare(&opts, &out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
