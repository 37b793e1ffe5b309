//! Command-line driver: model ingestion, analysis, simulation, Monte
//! Carlo and the validation suite.

pub mod analyze;
pub mod args;
pub mod config;
pub mod error;
pub mod montecarlo;
pub mod simulate;
pub mod validate;

use std::path::PathBuf;

pub use args::{Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

/// Files written and one-line notes for stdout.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn wrote(&mut self, path: PathBuf) {
        self.written.push(path);
    }
}

pub fn run(cli: Cli) -> CliResult<Outcome> {
    let config = RunConfig::from_cli(cli)?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?
            .install(|| dispatch(&config)),
        None => dispatch(&config),
    }
}

pub fn dispatch(config: &RunConfig) -> CliResult<Outcome> {
    log::info!("{:?} on {}", config.command, config.describe_source());
    match config.command {
        Command::Analyze => analyze::cmd_analyze(config),
        Command::Simulate => simulate::cmd_simulate(config),
        Command::Montecarlo => montecarlo::cmd_montecarlo(config),
        Command::Validate => validate::cmd_validate(config),
    }
}
