//! Command-line front end: `catalog`, `solve`, `simulate`, `verify` and
//! `control`. Every command writes its artifacts into one output directory
//! and is deterministic given its inputs. Exit codes: 0 success, 1 a check
//! or solver failure, 2 a usage or configuration error.

mod args;
mod commands;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;
use thiserror::Error;

pub use args::Cli;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] wfbsde::Error),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use wfbsde::Error as E;
        match self {
            CliError::Usage(_) | CliError::File { .. } => 2,
            CliError::Core(
                E::Config(_)
                | E::UnknownProblem(_)
                | E::Parse { .. }
                | E::Io(_)
                | E::Domain(_)
                | E::InsufficientSample { .. },
            ) => 2,
            CliError::Core(_) => 1,
        }
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

/// Parse `args` (including the program name) and run the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match commands::dispatch(&cli, out) {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Fail) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
