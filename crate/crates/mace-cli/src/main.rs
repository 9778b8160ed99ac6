mod artifacts;
mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mace", version, about = "Counterfactual explanations for black-box classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a bundled synthetic census-like dataset.
    Synth(commands::SynthArgs),
    /// Validate a dataset against its schema and fit the encoders.
    Prepare(commands::PrepareArgs),
    /// Train a bundled demo classifier and save it as an artifact.
    TrainModel(commands::TrainModelArgs),
    /// Explain one query instance.
    Explain(commands::ExplainArgs),
    /// Explain a batch of queries and aggregate the metrics.
    Evaluate(commands::EvaluateArgs),
    /// Probe a remote scorer: handshake and score one instance.
    ServeCheck(commands::ServeCheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Prepare(args) => commands::prepare(args),
        Command::TrainModel(args) => commands::train_model(args),
        Command::Explain(args) => commands::explain(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::ServeCheck(args) => commands::serve_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
