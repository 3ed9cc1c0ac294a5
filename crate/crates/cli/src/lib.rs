//! Command-line front end: argument parsing, config-file layering, logging
//! setup and the worker pool. Each subcommand lives in [`commands`].

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::IsTerminal;
use std::str::FromStr;

use clap::Parser;
use tracing::level_filters::LevelFilter;

use args::{Cli, Command, Overlay};
use config::FileConfig;
use error::CliError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parses `argv`, runs the chosen subcommand and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.record());
            EXIT_DOMAIN
        }
    }
}

fn parse_level(s: &str) -> Result<LevelFilter, CliError> {
    LevelFilter::from_str(s).map_err(|_| CliError::Invalid(format!("unknown log level {s:?}")))
}

fn init_logging(level: LevelFilter, json: bool) {
    let builder = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_max_level(level);
    // a second initialization (tests driving several commands in one process) is harmless
    let _ = if json { builder.json().try_init() } else { builder.try_init() };
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let level = match cli.log_level.as_deref().or(file.log_level.as_deref()) {
        Some(s) => parse_level(s)?,
        None => LevelFilter::INFO,
    };
    init_logging(level, cli.log_json || file.log_json.unwrap_or(false));

    let jobs = cli.jobs.or(file.jobs);
    if jobs == Some(0) {
        return Err(CliError::Invalid("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Merge(a) => commands::merge(a.overlay(file.merge)),
        Command::Split(a) => commands::split(a.overlay(file.split)),
        Command::Run(a) => commands::run(a.overlay(file.run)),
        Command::Eval(a) => commands::eval(a.overlay(file.eval)),
        Command::Report(a) => commands::report(a.overlay(file.report)),
    })
}
