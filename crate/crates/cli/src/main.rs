//! `steerid`: driver identification from steering-wheel time series.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

/// A problem with the command line rather than the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    if err.downcast_ref::<UsageError>().is_some() {
        return ("usage", EXIT_USAGE);
    }
    match err.downcast_ref::<steerid_core::Error>() {
        Some(steerid_core::Error::Divergence { .. }) => ("divergence", EXIT_DIVERGENCE),
        Some(steerid_core::Error::Config(_)) => ("config", EXIT_USAGE),
        _ => ("data", EXIT_DATA),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STEERID_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("steerid: error kind={kind} code={code}: {msg}");
            ExitCode::from(code)
        }
    }
}
