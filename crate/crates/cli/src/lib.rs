//! Experiment runner for `polymer-core`.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::ConfigError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;

fn set_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID_CONFIG } else { EXIT_OK };
        }
    };
    let cfg = match cli.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID_CONFIG;
        }
    };
    set_threads(cfg.run.threads);
    let result = match cli.command {
        Command::RateTable { .. } => commands::cmd_rate_table(&cfg),
        Command::Solve { .. } => commands::cmd_solve(&cfg),
        Command::Ensemble { .. } => commands::cmd_ensemble(&cfg),
        Command::Verify { .. } => commands::cmd_verify(&cfg),
        Command::EnvSample { .. } => commands::cmd_env_sample(&cfg),
    };
    match result {
        Ok(o) => {
            println!("{}", o.summary);
            if o.passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("error: {e}");
            EXIT_INVALID_CONFIG
        }
        Err(e) => {
            eprintln!("error ({}): {e:#}", cli.command_name());
            EXIT_CHECK_FAILED
        }
    }
}

