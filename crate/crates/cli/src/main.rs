mod args;
mod commands;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;

use clap::Parser;
use vacalc::error::{Error, ErrorKind};

use args::{Cli, Command};

/// Exit codes: 2 usage or configuration, 3 input data or I/O, 4 numerical
/// failure, 5 internal error.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        CliError { code: 2, message }
    }

    pub fn data(message: String) -> Self {
        CliError { code: 3, message }
    }

    pub fn internal(message: String) -> Self {
        CliError { code: 5, message }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data | ErrorKind::Io => 3,
            ErrorKind::Numeric => 4,
        };
        CliError { code, message: e.to_string() }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Estimate(c) => commands::estimate_cmd(c),
        Command::Baseline(c) => commands::baseline_cmd(c),
        Command::Classify(c) => commands::classify_cmd(c),
        Command::Validate(c) => commands::validate_cmd(c),
        Command::Simulate(c) => commands::simulate_cmd(c),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
        Err(_) => ExitCode::from(5),
    }
}
