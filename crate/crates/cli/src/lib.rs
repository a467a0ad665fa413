//! Subcommands of the `posegnn` binary.
//!
//! [`run`] parses arguments and returns the process exit code, so the whole
//! CLI can be driven in-process:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | runtime failure (I/O, malformed data) |
//! | 2 | usage error |
//! | 3 | training diverged |
//! | 4 | checkpoint and dataset are incompatible |

mod args;
mod commands;
mod output;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use commands::{cmd_eval, cmd_export_graph, cmd_gen, cmd_sweep_k, cmd_train, Loaded, SweepRow};
pub use output::{EvalRow, LossRow, Manifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate:e})")]
    Divergence { epoch: usize, learning_rate: f64 },
    #[error("incompatible input: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Failed(posegnn::Error),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Divergence { .. } => 3,
            CliError::Incompatible(_) => 4,
            CliError::Failed(_) | CliError::Output(_) => 1,
        }
    }
}

impl From<posegnn::Error> for CliError {
    fn from(e: posegnn::Error) -> Self {
        match e {
            posegnn::Error::Divergence { epoch, learning_rate } => CliError::Divergence { epoch, learning_rate },
            posegnn::Error::Incompatible(msg) => CliError::Incompatible(msg),
            posegnn::Error::Parameter(msg) => CliError::Usage(msg),
            other => CliError::Failed(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::SweepK(a) => cmd_sweep_k(&a).map(|_| ()),
        Command::ExportGraph(a) => cmd_export_graph(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
