//! `samo`: data generation, training, evaluation, ablations and embedding
//! projections from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data or configuration error,
//! 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "samo",
    version,
    about = "Speaker-attractor one-class anti-spoofing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key=value` config file [default: built-in defaults]
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key (repeatable); wins over the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic corpus as CSV and print a per-partition summary
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output corpus CSV
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train one model; writes best/final checkpoints and the epoch history
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Objective (overrides the `objective` key)
        #[arg(long, value_parser = ["samo", "ocs", "softmax"])]
        objective: Option<String>,
        /// Output directory (created if missing)
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Also write a checkpoint after every epoch
        #[arg(long, default_value_t = false)]
        save_every_epoch: bool,
    },
    /// Score a partition with a checkpoint; writes score and metrics CSVs
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint written by `train`
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Partition to score
        #[arg(long, default_value = "eval", value_parser = ["train", "dev", "eval"])]
        partition: String,
        /// Scoring mode: claimed speaker's enrollment center, nearest attractor, or both
        #[arg(long, default_value = "both", value_parser = ["enroll", "noenroll", "both"])]
        mode: String,
        /// Output directory (created if missing)
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Run one attractor ablation and report eval metrics
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// 2 one-hot fixed, 3 single update at epoch 2, 4 M=1, 5 M=10
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=5))]
        setup: u8,
        /// Output directory (created if missing)
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// 2-D PCA projection of selected speakers' embeddings
    Project {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint written by `train`
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Partition to score
        #[arg(long, default_value = "eval", value_parser = ["train", "dev", "eval"])]
        partition: String,
        /// Comma-separated speaker ids
        #[arg(long, value_delimiter = ',', required = true)]
        speakers: Vec<String>,
        /// Output CSV `utt_id,speaker,label,px,py`
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train once per seed and report mean and best eval metrics
    Seeds {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated seeds
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Objective (overrides the `objective` key)
        #[arg(long, value_parser = ["samo", "ocs", "softmax"])]
        objective: Option<String>,
        /// Output directory (created if missing)
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
