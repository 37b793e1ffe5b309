use cmj_core::martingale::{complex_object, MomentConditionReport};
use cmj_core::montecarlo::{write_curve_csv, DEFAULT_GROWTH_FACTOR};
use cmj_core::{
    boundedness_diagnostic, check_moment_condition, mean_identity_check, run_experiment, BoundednessReport, CMatrix,
    Complex64, ExperimentPlan, MeanIdentityReport,
};
use serde::{Deserialize, Serialize};

use crate::config::{require_assumptions, select_root, write_file, RunConfig};
use crate::error::{CliError, CliResult};
use crate::Outcome;

pub const CURVE_FILE: &str = "moment_curve.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const DEFAULT_GRID: [f64; 4] = [0.0, 1.0, 2.0, 4.0];

/// Draws per batch for the moment-condition estimate.
pub const MOMENT_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub seed: u64,
    #[serde(with = "complex_object")]
    pub lambda: Complex64,
    pub pole_order: usize,
    pub q: f64,
    pub t_grid: Vec<f64>,
    pub n_replicas: usize,
    pub excluded: Vec<usize>,
    pub expected: CMatrix,
    pub mean_generation_time: Option<f64>,
    pub mean_identity: MeanIdentityReport,
    pub boundedness: BoundednessReport,
    pub moment_condition: MomentConditionReport,
    /// Mean identity holds, the curve is bounded where the diagnostic
    /// applies, and the moment estimate is finite.
    pub passed: bool,
}

pub fn cmd_montecarlo(config: &RunConfig) -> CliResult<Outcome> {
    let model = config.load_model()?;
    let alpha = require_assumptions(&model)?;
    let laurent = select_root(&model, alpha, &config.overrides)?;
    let grid = config.overrides.t_grid.clone().unwrap_or_else(|| DEFAULT_GRID.to_vec());
    let mut plan = ExperimentPlan::new(model.clone(), laurent, grid, config.overrides.n_replicas, config.seed);
    plan.q = config.overrides.q;
    plan.tail_tolerance = config.overrides.tail_tolerance;
    plan.validate()?;

    let curve = run_experiment(&plan)?;
    let mean_identity = mean_identity_check(&curve, plan.tolerance);
    let boundedness = boundedness_diagnostic(&curve, DEFAULT_GROWTH_FACTOR);
    let moment_condition =
        check_moment_condition(&model, curve.lambda, curve.pole_order, plan.q, MOMENT_SAMPLES, config.seed)?;
    let passed = mean_identity.passed
        && (!boundedness.applicable || boundedness.bounded)
        && moment_condition.finite;

    let curve_path = config.output_file(CURVE_FILE)?;
    let mut buf = Vec::new();
    write_curve_csv(&curve, &mut buf)?;
    write_file(&curve_path, &buf)?;

    let summary = MonteCarloSummary {
        seed: config.seed,
        lambda: curve.lambda,
        pole_order: curve.pole_order,
        q: curve.q,
        t_grid: plan.t_grid.clone(),
        n_replicas: curve.n_replicas,
        excluded: curve.excluded.clone(),
        expected: curve.expected.clone(),
        mean_generation_time: curve.mean_generation_time,
        mean_identity,
        boundedness,
        moment_condition,
        passed,
    };
    let summary_path = config.output_file(SUMMARY_FILE)?;
    write_file(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes())?;

    let mut outcome = Outcome::default();
    outcome.note(format!(
        "mean identity: {} of {} checks outside {}σ; boundedness: {}",
        summary.mean_identity.outside,
        summary.mean_identity.checks,
        plan.tolerance,
        if !summary.boundedness.applicable {
            "not applicable"
        } else if summary.boundedness.bounded {
            "bounded"
        } else {
            "not bounded"
        }
    ));
    outcome.wrote(curve_path);
    outcome.wrote(summary_path);
    if config.strict && !passed {
        return Err(CliError::Strict("Monte Carlo diagnostics failed".into()));
    }
    Ok(outcome)
}
