//! Command-line front end: configuration, subcommand dispatch and
//! deterministic CSV output.

mod args;
mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use args::Cli;
pub use config::{Config, Subcommand};
pub use error::CliError;

/// Runs the tool on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            let _ = writeln!(stdout, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let sub = cli.subcommand();
    let cfg = Config::resolve(sub, cli.config.as_deref(), &cli.overrides()?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let mut out = output::OutputDir::create(&cli.out_dir)?;
    let result = pool.install(|| match sub {
        Subcommand::Spde => commands::spde(&cfg, &mut out),
        Subcommand::Socp => commands::socp(&cfg, &mut out),
        Subcommand::Compress => commands::compress(&cfg, &mut out),
        Subcommand::Diagnose => commands::diagnose(&cfg, &mut out),
    });
    // partial outputs of a failed run are still described by the manifest
    if matches!(result, Ok(_) | Err(CliError::Failed(_))) {
        out.finish(sub, &cfg)?;
    }
    result
}
