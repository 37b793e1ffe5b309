use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "cmj", version, about = "Complex matrix martingales of multi-type Crump–Mode–Jagers processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Malthusian parameter, characteristic roots and Laurent coefficients.
    Analyze,
    /// One simulated path with the martingale in all three representations.
    Simulate,
    /// Replicated paths: moment curve, mean identity and boundedness.
    Montecarlo,
    /// The invariant suite, one pass/fail entry per check.
    Validate,
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    /// Model file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub model: Option<PathBuf>,

    /// Built-in model: 1, 2, nerman, chain or primitive.
    #[arg(long, global = true, value_name = "NAME")]
    pub example: Option<String>,

    /// Poisson rate of the built-in examples 2, nerman and primitive.
    #[arg(long, global = true, allow_negative_numbers = true, default_value_t = 1.0)]
    pub rate: f64,

    /// Ancestor type (1-based), overriding the model.
    #[arg(long, global = true)]
    pub ancestor: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Simulation horizon; defaults to the last grid time.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub horizon: Option<f64>,

    /// Evaluation times, comma separated.
    #[arg(long, global = true, allow_negative_numbers = true, value_delimiter = ',', value_name = "T,...")]
    pub t_grid: Option<Vec<f64>>,

    #[arg(long, global = true, default_value_t = 1000)]
    pub replicas: usize,

    /// Moment order, in (1, 2].
    #[arg(long, global = true, allow_negative_numbers = true, default_value_t = 2.0)]
    pub q: f64,

    /// Select the verified root nearest this point.
    #[arg(long, global = true, allow_negative_numbers = true, value_delimiter = ',', value_name = "RE,IM")]
    pub lambda: Option<Vec<f64>>,

    /// Root search rectangle.
    #[arg(long, global = true, allow_negative_numbers = true, value_delimiter = ',', value_name = "RE0,RE1,IM0,IM1")]
    pub region: Option<Vec<f64>>,

    /// Largest admissible truncation bound.
    #[arg(long, global = true, allow_negative_numbers = true, default_value_t = 1e-8)]
    pub tail_tol: f64,

    /// Worker threads for Monte Carlo.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Exit with status 4 when a diagnostic fails.
    #[arg(long, global = true)]
    pub strict: bool,
}
