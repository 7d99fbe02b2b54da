mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Failure of a CLI run, carrying its exit code class.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(surprise_core::Error),
}

impl From<surprise_core::Error> for CliError {
    fn from(e: surprise_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(surprise_core::Error::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }

    fn class(&self) -> &'static str {
        match self.code() {
            1 => "usage",
            3 => "numeric",
            _ => "data",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.message().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}
