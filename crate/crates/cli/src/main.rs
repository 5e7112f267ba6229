//! `kgfuse` command-line pipeline.

mod commands;
mod config;
mod report;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

/// Process exit status of a failed command.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Diverged(m) => m,
        }
    }
}

impl From<kgfuse::Error> for CliError {
    fn from(e: kgfuse::Error) -> Self {
        match e {
            kgfuse::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            kgfuse::Error::TrainingDiverged { .. } => CliError::Diverged(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "kgfuse", version, about = "Knowledge-graph fusion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score candidate triples with masked-sentence relation weights.
    Weights(commands::WeightsArgs),
    /// Train the relational encoder and write a frozen GK store.
    TrainGk(commands::TrainGkArgs),
    /// Train the fusion model on task documents.
    TrainTask(commands::TrainTaskArgs),
    /// Evaluate a trained model; prints F1 and writes a metrics report.
    Eval(commands::EvalArgs),
    /// Generate a synthetic knowledge graph and task corpus.
    GenSynthetic(commands::GenSyntheticArgs),
    /// Materialize toy-embedder vectors into an embedding file.
    EmbedToy(commands::EmbedToyArgs),
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Weights(a) => commands::weights(a),
        Command::TrainGk(a) => commands::train_gk(a),
        Command::TrainTask(a) => commands::train_task(a),
        Command::Eval(a) => commands::eval(a),
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::EmbedToy(a) => commands::embed_toy(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
