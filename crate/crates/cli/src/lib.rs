//! The `aegis` command line: batch verbs over the engine, a line-oriented
//! session, and the HTTP service launcher.

mod args;
mod commands;
mod config;
pub mod infer;

use std::ffi::OsString;
use std::io::{BufRead, Write};

use clap::Parser;

pub use args::{Cli, Command, Format};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Domain(#[from] aegis_core::Error),
}

pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Parses `args` and runs the command, returning the process exit code.
/// Usage errors go to stderr as text; domain errors as one JSON object.
pub fn run<I, T>(args: I, io: Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                io.stderr.write_all(rendered.as_bytes())
            } else {
                io.stdout.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match commands::dispatch(cli, io.stdin, io.stdout) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(io.stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Domain(err)) => {
            let _ = writeln!(io.stderr, "{}", serde_json::to_string(&err.body()).expect("error body serializes"));
            EXIT_DOMAIN
        }
    }
}
