use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmaf::{cmd_ablate, cmd_eval, cmd_report, cmd_synth, cmd_train, run, EvalArgs};

/// RGB-D semantic segmentation with attention-based modality fusion.
///
/// Everything that affects numerics lives in the INI config; flags only pick
/// files and directories. Exit codes: 0 success, 2 usage or configuration
/// error, 3 numeric failure (divergence).
#[derive(Parser)]
#[command(name = "mmaf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RGB-D dataset from the [synth] section.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Dataset root; must be empty or absent.
        #[arg(long)]
        out: PathBuf,
        /// Overrides [synth] seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on [data] root; writes checkpoint.mmaf and train_log.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides [train] seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint up to [train] epochs.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: metric CSVs and predicted label maps.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root; defaults to [data] root.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Split to evaluate; defaults to [data] test_split.
        #[arg(long)]
        split: Option<String>,
    },
    /// Train every [ablation] variant for every seed; writes ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// CDF plots (SVG) and data from an eval output directory.
    Report {
        /// Directory holding per_image.csv and bde.csv.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Synth { config, out, seed } => run(cmd_synth(&config, &out, seed)),
        Command::Train { config, out, seed, resume } => run(cmd_train(&config, &out, seed, resume.as_deref())),
        Command::Eval { checkpoint, out, config, data, split } => run(cmd_eval(&EvalArgs {
            checkpoint: &checkpoint,
            out: &out,
            config: config.as_deref(),
            data: data.as_deref(),
            split: split.as_deref(),
        })),
        Command::Ablate { config, out } => run(cmd_ablate(&config, &out)),
        Command::Report { metrics, out, config } => run(cmd_report(&metrics, &out, config.as_deref())),
    };
    ExitCode::from(code as u8)
}
