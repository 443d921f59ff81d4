//! Command-line surface of the pruning toolkit: synthetic data, noise
//! injection, training, offline and streaming pruning, and evaluation.
//!
//! Every command writes a [`RunManifest`] next to its outputs. Event ids are
//! always the ordinals of records in the event file being read.

pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;
pub mod proxy;

use clap::{Parser, Subcommand};

pub use commands::*;
pub use error::{CliError, CliResult, ErrorKind};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "step", version = manifest::BUILD_ID, about = "Unsupervised pruning of temporal interaction graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-community synthetic event file.
    Generate(GenerateArgs),
    /// Add random noise events and record which ones were added.
    Inject(InjectArgs),
    /// Train encoder, edge sampler and pruner on an event file.
    Train(TrainArgs),
    /// Score and prune an event file offline.
    Prune(PruneArgs),
    /// Filter JSON-lines events from stdin to stdout.
    Stream(StreamArgs),
    /// Compare a decision log against a noise mask.
    Eval(EvalArgs),
}

/// Runs one parsed command, printing its summary.
pub fn run(cli: Cli) -> CliResult<()> {
    let print = |v: &serde_json::Value| -> CliResult<()> {
        use std::io::Write;
        let text = serde_json::to_string_pretty(v)?;
        match writeln!(std::io::stdout().lock(), "{text}") {
            // A closed pipe (`step eval ... | head`) is not a failure.
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        }
    };
    match cli.command {
        Command::Generate(a) => print(&cmd_generate(&a)?.summary),
        Command::Inject(a) => print(&cmd_inject(&a)?.summary),
        Command::Train(a) => print(&cmd_train(&a)?.summary),
        Command::Prune(a) => print(&cmd_prune(&a)?.summary),
        Command::Eval(a) => print(&cmd_eval(&a)?.1.summary),
        Command::Stream(a) => {
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            let (summary, _) = cmd_stream(&a, stdin, stdout)?;
            eprintln!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
    }
}
