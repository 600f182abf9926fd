//! `qvae`: train, evaluate and inspect discrete-latent VAEs with
//! Boltzmann-machine priors.
//!
//! Every command prints one JSON summary on stdout; progress and the
//! canonical config echo go to stderr. Exit codes: 0 success, 1 other
//! runtime failure, 2 configuration or argument error, 3 training
//! divergence, 4 I/O or file-format error.

mod calib;
mod config;
mod dataset;
mod graph;
mod inspect;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Divergence(String),
    Io(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Divergence(m) => write!(f, "training diverged: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<qvae::Error> for CliError {
    fn from(e: qvae::Error) -> Self {
        use qvae::Error as E;
        match e {
            E::InvalidArgument(_) => CliError::Config(e.to_string()),
            E::Divergence { .. } => CliError::Divergence(e.to_string()),
            E::Io(_) | E::Format(_) | E::Json(_) => CliError::Io(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "qvae", version, about = "Discrete-latent VAEs with Boltzmann-machine priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config; writes config echo, split, metrics and checkpoints.
    Train(train::TrainArgs),
    /// Importance-weighted log-likelihood and active units of a checkpoint.
    Eval(inspect::EvalArgs),
    /// Decode prior samples into an image grid.
    Sample(inspect::SampleArgs),
    /// Decode block-Gibbs walks on the prior, one chain per grid row.
    Chain(inspect::ChainArgs),
    /// Effective-temperature recovery against the annealer emulator.
    Calib(calib::CalibArgs),
    /// Graph inspection.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Compare generated class frequencies with and without prior couplings.
    Ablate(inspect::AblateArgs),
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Node, edge and coloring counts of a connectivity.
    Info(graph::InfoArgs),
}

/// Checkpoint input shared by the inspection commands.
#[derive(Args, Debug, Clone)]
pub struct CheckpointArg {
    /// Checkpoint written by `qvae train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

pub fn print_summary(value: &serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    // A closed stdout (e.g. piped into `head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => inspect::eval(a),
        Command::Sample(a) => inspect::sample(a),
        Command::Chain(a) => inspect::chain(a),
        Command::Calib(a) => calib::run(a),
        Command::Graph { command: GraphCommand::Info(a) } => graph::info(a),
        Command::Ablate(a) => inspect::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
