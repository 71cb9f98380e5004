use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod data;
mod eval;
mod latent_eval;
mod manifest;
mod reenact;
mod synth_data;
mod train;

/// One-shot face reenactment: landmark disentanglement and dictionary-guided
/// portrait synthesis.
#[derive(Parser, Debug)]
#[command(name = "reenact", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    SynthData(synth_data::SynthDataArgs),
    Train(train::TrainArgs),
    Reenact(reenact::ReenactArgs),
    Eval(eval::EvalArgs),
    LatentEval(latent_eval::LatentEvalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(a) => synth_data::run(a),
        Command::Train(a) => train::run(a),
        Command::Reenact(a) => reenact::run(a),
        Command::Eval(a) => eval::run(a),
        Command::LatentEval(a) => latent_eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
