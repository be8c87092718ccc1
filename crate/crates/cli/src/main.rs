//! `afh`: training, evaluation, single-image hallucination, ablation suites
//! and trajectory rendering.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use afh_core::error::AfhError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "afh", version, about = "Attention-aware face hallucination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the run config comes from, plus per-invocation overrides.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// JSON run config.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in preset (`toy` or `paper`), used when no --config is given.
    #[arg(long)]
    pub preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; resumes when --checkpoint is given.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint to resume from.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Overrides the total iteration budget.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Greedy evaluation on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Reports per-episode latency.
        #[arg(long)]
        time: bool,
    },
    /// Enhance one low-resolution image.
    Hallucinate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Low-resolution input image.
        input: PathBuf,
        /// Output PNG at the model resolution.
        output: PathBuf,
        /// Run config overriding the one stored in the checkpoint.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Writes the episode's step images and manifest to this directory.
        #[arg(long, value_name = "DIR")]
        dump_trajectory: Option<PathBuf>,
        /// Reports episode latency.
        #[arg(long)]
        time: bool,
    },
    /// Train and evaluate the variants of an ablation suite.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// tsweep, random_patch, no_attention or i0_input.
        #[arg(long)]
        suite: String,
    },
    /// Render an exported trajectory as a PNG grid.
    Visualize {
        trajectory_dir: PathBuf,
        output: PathBuf,
    },
}

fn run(cli: Cli) -> afh_core::error::Result<()> {
    match cli.command {
        Command::Train {
            cfg,
            checkpoint,
            iterations,
        } => commands::train(&cfg, checkpoint, iterations),
        Command::Eval {
            cfg,
            checkpoint,
            time,
        } => commands::eval(&cfg, &checkpoint, time),
        Command::Hallucinate {
            checkpoint,
            input,
            output,
            config,
            dump_trajectory,
            time,
        } => commands::hallucinate(
            &checkpoint,
            &input,
            &output,
            config.as_deref(),
            dump_trajectory.as_deref(),
            time,
        ),
        Command::Ablate { cfg, suite } => commands::ablate(&cfg, &suite),
        Command::Visualize {
            trajectory_dir,
            output,
        } => commands::visualize(&trajectory_dir, &output),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                AfhError::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
