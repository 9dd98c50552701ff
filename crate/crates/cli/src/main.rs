mod commands;
mod config;
mod inputs;
mod manifest;

use clap::{Parser, Subcommand};
use std::fmt;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

/// Commit-aware pre-training, fine-tuning and evaluation.
#[derive(Debug, Parser)]
#[command(name = "commitbart", version = manifest::VERSION)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value = "1")]
    pub threads: NonZeroUsize,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic commits.
    Synth(commands::SynthArgs),
    /// Filter, de-duplicate and shard commits into a corpus directory.
    Ingest(commands::IngestArgs),
    /// Print per-language counts, histograms and sampling probabilities.
    Stats(commands::StatsArgs),
    /// Materialize pre-training examples for inspection.
    BuildPretrain(commands::BuildPretrainArgs),
    /// Multi-task pre-training; writes a checkpoint and a loss curve.
    Pretrain(commands::PretrainArgs),
    /// Fine-tune a checkpoint on one downstream task.
    Finetune(commands::FinetuneArgs),
    /// Decode predictions for a data split.
    Generate(commands::GenerateArgs),
    /// Score predictions against references.
    Evaluate(commands::EvaluateArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(commands::ReplayArgs),
}

/// A failure caused by the caller's input rather than by the program.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub trait OrInput<T> {
    fn or_input(self) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> OrInput<T> for Result<T, E> {
    fn or_input(self) -> anyhow::Result<T> {
        self.map_err(|e| InputError(format!("{:#}", e.into())).into())
    }
}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
