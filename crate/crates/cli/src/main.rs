//! `mdbnet`: dataset generation, voxelization, training, evaluation and
//! reporting for the desk-scale completion network.
//!
//! Exit codes: 0 success, 1 validation failure, 2 internal error, 64 usage.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "mdbnet",
    version,
    about = "Semantic scene completion on synthetic desk-scale rooms"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Tier {
    Easy,
    Skewed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Fusion {
    Early,
    Mid,
    Late,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Block {
    Preact,
    Itrm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Weighting {
    Kmeans,
    Resample,
}

/// Flags of the ablation matrix; each maps onto one config key.
#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    #[arg(long, value_enum)]
    fusion: Option<Fusion>,
    #[arg(long, value_enum)]
    block: Option<Block>,
    #[arg(long, value_enum)]
    weighting: Option<Weighting>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Gen {
        /// Number of scenes (overrides data.scenes).
        #[arg(long)]
        scenes: Option<usize>,
        /// Scene preset; `--set data.scene.*` refines it.
        #[arg(long, value_enum)]
        tier: Option<Tier>,
    },
    /// Write the F-TSDF of every manifest sample as `{id}_ftsdf.vxg`.
    Voxelize {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compute class weights over a manifest and write `class_weights.txt`.
    Weights {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// K-fold training; writes per-fold checkpoints and logs plus validation reports.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Re-evaluate a training run's checkpoints into `reports.csv`.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck,
    /// Aggregate fold reports into mean±std tables.
    Report {
        /// Run directories holding `reports.csv`; one table row each.
        #[arg(long, required = true, num_args = 1..)]
        run: Vec<PathBuf>,
        /// Row labels, in `--run` order (defaults to directory names).
        #[arg(long, num_args = 1..)]
        label: Vec<String>,
        /// Emit the two-column ablation table with this first-column header.
        #[arg(long)]
        ablation: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
