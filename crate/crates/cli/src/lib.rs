//! Command-line front end for the `sgconv` crate.

pub mod args;
pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod verify;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
use commands::Outcome;
use error::CliError;

/// Parses `argv` (with `--config` expansion) and runs the command.
pub fn run(argv: Vec<OsString>) -> Result<Outcome, CliError> {
    let argv = config::expand_config(argv, args::SUBCOMMANDS)?;
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Failed(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    let g = &cli.global;
    let dispatch = || match &cli.command {
        Command::Verify(a) => commands::verify(g, a),
        Command::Bench(a) => commands::bench(g, a),
        Command::DumpKernel(a) => commands::dump_kernel(g, a),
        Command::Train(a) => commands::train_cmd(g, a),
        Command::Ablate(a) => commands::ablate(g, a),
    };
    match (g.threads, &cli.command) {
        (0, _) => Err(CliError::usage("--threads must be >= 1")),
        (n, Command::Bench(_)) => {
            if n > 1 {
                eprintln!("note: bench is single-threaded; --threads {n} ignored");
            }
            dispatch()
        }
        (n, _) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::usage(e.to_string()))?
            .install(dispatch),
    }
}
