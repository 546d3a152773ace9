//! Library side of the `ddsr` command: flag parsing, the six subcommands and
//! their file outputs. `main.rs` only maps [`CliError`] to an exit code.

pub mod args;
pub mod commands;
pub mod imageio;
pub mod manifest;

use std::ffi::OsString;
use std::fmt;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or conflicting options (exit code 2).
    Usage(String),
    /// Unreadable, empty or mis-sized input (exit code 3).
    Data(String),
    /// NaN or infinity during training or inference (exit code 4).
    Numeric(String),
    /// Anything else, including output I/O (exit code 1).
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ddsr::Error> for CliError {
    fn from(e: ddsr::Error) -> Self {
        match e {
            ddsr::Error::InvalidArgument(m) => CliError::Usage(m),
            ddsr::Error::NonFinite(m) => CliError::Numeric(format!("non-finite value in {m}")),
            ddsr::Error::Data(m) => CliError::Data(m),
            ddsr::Error::Shape(_) | ddsr::Error::Checkpoint(_) => CliError::Data(e.to_string()),
            ddsr::Error::Io(_) => CliError::Failure(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

/// Caps the global rayon pool at `DDSR_THREADS` workers. Only the first call
/// in a process can size the pool; later calls are no-ops.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DDSR_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("DDSR_THREADS must be a positive integer, got {v:?}")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `argv` (program name first) and runs the selected command.
pub fn run<I, T>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    configure_threads()?;
    let recorded: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    commands::dispatch(cli.command, &recorded)
}
