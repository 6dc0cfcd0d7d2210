//! The `rofdecide` command line. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code.

mod args;
mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::Path;

use clap::Parser;

pub use args::Cli;
pub use commands::{execute, perform, ModelFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing inputs, unreadable configs.
    Usage(String),
    /// A verification or replay check did not hold.
    Failed(String),
    Diverged { iteration: usize },
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) | CliError::Runtime(_) => EXIT_FAILED,
            CliError::Diverged { .. } => EXIT_DIVERGED,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(m) => write!(f, "check failed: {m}"),
            CliError::Diverged { iteration } => write!(f, "training diverged at iteration {iteration}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<rofdecide::Error> for CliError {
    fn from(e: rofdecide::Error) -> Self {
        match e {
            rofdecide::Error::Divergence { iteration, .. } => CliError::Diverged { iteration },
            rofdecide::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// Runs the command line and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("rofdecide: {e}");
            e.exit_code()
        }
    }
}
