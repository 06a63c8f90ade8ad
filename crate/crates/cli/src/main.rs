//! `keypose`: dataset generation, tokenization, decoding, evaluation,
//! cropping and prompt assembly from the command line.

mod commands;
mod config;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Failure;

#[derive(Debug, Parser)]
#[command(name = "keypose", version, about = "Keypose action tokenization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic pick-and-place dataset.
    GenDataset(commands::gen_dataset::Args),
    /// Encode trajectories to tokens, or decode token strings to trajectories.
    Encode(commands::encode::Args),
    /// Decode an LGTD logit dump with greedy, sampling, beam or beam-NMS search.
    DecodeLogits(commands::decode::Args),
    /// Score predictions against ground truth: L1, AP/mAP, Spearman.
    Eval(commands::eval::Args),
    /// Crop and resize an image, mapping points into crop coordinates.
    Crop(commands::crop::Args),
    /// Sample imitation (or language) prompts from dataset records.
    PairSample(commands::pair_sample::Args),
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
    let result = match cli.command {
        Command::GenDataset(a) => commands::gen_dataset::run(a),
        Command::Encode(a) => commands::encode::run(a),
        Command::DecodeLogits(a) => commands::decode::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Crop(a) => commands::crop::run(a),
        Command::PairSample(a) => commands::pair_sample::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                Failure::Usage(_) => "usage error",
                Failure::Data(_) => "error",
            };
            eprintln!("keypose: {kind}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
