//! Command-line surface of the `vf` binary.

use clap::{Parser, Subcommand};

use crate::commands::{self, EvaluateArgs, GenCorpusArgs, SeparateArgs, SweepArgs, TrainArgs, ValidateArgs};

#[derive(Debug, Parser)]
#[command(name = "vf", version, about = "Conditioned speech separation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a TOML run config.
    Train(TrainArgs),
    /// Extract the conditioned speaker from a mixture WAV.
    Separate(SeparateArgs),
    /// Score a checkpoint on mixtures built from a manifest.
    Evaluate(EvaluateArgs),
    /// Score a checkpoint along one perturbation axis.
    Sweep(SweepArgs),
    /// Generate a synthetic corpus with features and a manifest.
    GenCorpus(GenCorpusArgs),
    /// Check manifests, features, checkpoints, configs or WAV files.
    Validate(ValidateArgs),
}

/// Runs one subcommand.
pub fn run(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Train(a) => commands::train(a),
        Command::Separate(a) => commands::separate(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a).map(|_| ()),
        Command::Sweep(a) => commands::sweep(a),
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Validate(a) => commands::validate(a),
    }
}
