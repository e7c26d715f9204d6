//! `mbs`: train toy byte-level models, plan calibration sets, compress with
//! calibration-aware pruning or quantization, and analyse language similarity.

mod compress;
mod config;
mod error;
mod plan;
mod report;
mod similarity;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(name = "mbs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multilingual corpus and its manifest
    Synth(synth::SynthArgs),
    /// Train a byte-level model on a manifest's training texts
    Train(train::TrainArgs),
    /// Allocate calibration segments across languages
    Plan(plan::PlanArgs),
    /// Prune or quantize a checkpoint and report perplexity changes
    Compress(compress::CompressArgs),
    /// Angular distances between per-language activation profiles
    Similarity(similarity::SimilarityArgs),
    /// Compare two checkpoints, or print a saved report
    Report(report::ReportArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Plan(a) => plan::run(a),
        Command::Compress(a) => compress::run(a),
        Command::Similarity(a) => similarity::run(a),
        Command::Report(a) => report::run(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
