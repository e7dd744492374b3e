mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::CliError;
use crate::config::{RawConfig, Settings};

#[derive(Parser)]
#[command(name = "zfda", version, about = "Zero-forget domain adaptation of semantic-communication autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Trains the autoencoder and writes the pristine checkpoint.
    Pretrain(Common),
    /// Adapts the pristine checkpoint to the configured domain.
    Adapt {
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluates an encoder/decoder pairing on held-out pre-training data.
    AlignEval {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Applies, reverts or verifies a sparse patch.
    Patch {
        #[arg(value_enum)]
        action: PatchAction,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        patch: PathBuf,
        /// Destination checkpoint for apply/revert.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs one experiment suite and writes its CSV table.
    Experiment {
        #[arg(value_enum)]
        suite: Suite,
        #[command(flatten)]
        common: Common,
    },
    /// Writes the synthetic dataset as `.zft` tensors.
    GenData(Common),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    Full,
    Zfda,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PatchAction {
    Apply,
    Revert,
    Verify,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Suite {
    Misalignment,
    ZfdaSweep,
    Ablation,
}

fn settings(common: &Common) -> Result<Settings, CliError> {
    let mut raw = RawConfig::defaults();
    if let Some(path) = &common.config {
        raw.load(path).map_err(CliError::config)?;
    }
    for pair in &common.set {
        raw.set_pair(pair).map_err(CliError::config)?;
    }
    Settings::resolve(raw).map_err(CliError::config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Pretrain(c) => commands::pretrain(&settings(&c)?),
        Command::Adapt { method, common } => commands::adapt(&settings(&common)?, method),
        Command::AlignEval {
            encoder,
            decoder,
            common,
        } => commands::align_eval(&settings(&common)?, &encoder, &decoder),
        Command::Patch {
            action,
            checkpoint,
            patch,
            out,
        } => commands::patch(action, &checkpoint, &patch, out.as_deref()),
        Command::Experiment { suite, common } => commands::experiment(&settings(&common)?, suite),
        Command::GenData(c) => commands::gen_data(&settings(&c)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
