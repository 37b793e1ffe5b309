use cmj_core::martingale::complex_object;
use cmj_core::population::{simulate, write_tree_csv};
use cmj_core::{
    certified_tree, eval_w_characteristic, eval_w_increments, hs_norm, validate_assumptions, CMatrix, Complex64,
    TailPolicy,
};
use serde::{Deserialize, Serialize};

use crate::config::{require_assumptions, select_root, write_file, RunConfig};
use crate::error::{CliError, CliResult};
use crate::Outcome;

pub const TREE_FILE: &str = "tree.csv";
pub const MARTINGALE_FILE: &str = "martingale.json";

/// Representations must agree to this, relative to `max(1, ‖W‖)`, plus
/// their truncation bounds.
pub const AGREEMENT_TOL: f64 = 1e-10;

const DEFAULT_GRID: [f64; 3] = [0.0, 1.0, 2.0];

/// `W_t` at one grid time in all three representations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridRecord {
    pub t: f64,
    pub coming_generation: CMatrix,
    pub characteristic: CMatrix,
    pub increment_sum: CMatrix,
    /// Bounds in the order above.
    pub truncation_bounds: [f64; 3],
    /// Largest pairwise HS distance.
    pub max_discrepancy: f64,
    pub allowance: f64,
    pub agree: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    #[serde(with = "complex_object")]
    pub lambda: Complex64,
    pub pole_order: usize,
    pub horizon: f64,
    pub tail_cutoff: f64,
    pub individuals: usize,
    pub records: Vec<GridRecord>,
    pub all_agree: bool,
}

pub fn cmd_simulate(config: &RunConfig) -> CliResult<Outcome> {
    let model = config.load_model()?;
    let grid = config.overrides.t_grid.clone().unwrap_or_else(|| DEFAULT_GRID.to_vec());
    let horizon = config.overrides.horizon.unwrap_or_else(|| grid.iter().copied().fold(0.0, f64::max));
    let mut outcome = Outcome::default();

    let report = validate_assumptions(&model);
    if report.a1_passed && !report.a2_passed {
        // Without a Malthusian parameter there is no martingale to evaluate.
        let tree = simulate(&model, horizon, horizon + 1.0, config.seed)?;
        let path = config.output_file(TREE_FILE)?;
        write_tree(&tree, &path)?;
        outcome.note(format!("tree only: {}", report.a2_detail.unwrap_or_default()));
        outcome.wrote(path);
        return Ok(outcome);
    }
    let alpha = require_assumptions(&model)?;
    let laurent = select_root(&model, alpha, &config.overrides)?;

    let mut times = grid.clone();
    if times.last().is_none_or(|&t| t < horizon) {
        times.push(horizon);
    }
    let policy = TailPolicy::new(&model, &laurent, horizon, alpha, config.overrides.tail_tolerance);
    let (tree, coming) = certified_tree(&model, &laurent, &times, config.seed, &policy)?;

    let mut records = Vec::with_capacity(grid.len());
    for (&t, a) in grid.iter().zip(&coming) {
        let b = eval_w_characteristic(&tree, &laurent, t, None)?;
        let c = eval_w_increments(&tree, &laurent, t, None)?;
        let max_discrepancy = [(&a.value, &b.value), (&a.value, &c.value), (&b.value, &c.value)]
            .iter()
            .map(|(x, y)| hs_norm(&(*x - *y)))
            .fold(0.0, f64::max);
        let bounds = [a.truncation_bound, b.truncation_bound, c.truncation_bound];
        let allowance = AGREEMENT_TOL * hs_norm(&a.value).max(1.0) + bounds.iter().sum::<f64>();
        records.push(GridRecord {
            t,
            coming_generation: a.value.clone(),
            characteristic: b.value,
            increment_sum: c.value,
            truncation_bounds: bounds,
            max_discrepancy,
            allowance,
            agree: max_discrepancy <= allowance,
        });
    }
    let report = SimulationReport {
        seed: config.seed,
        lambda: laurent.root.lambda,
        pole_order: laurent.pole_order(),
        horizon,
        tail_cutoff: tree.tail_cutoff(),
        individuals: tree.len(),
        all_agree: records.iter().all(|r| r.agree),
        records,
    };

    let tree_path = config.output_file(TREE_FILE)?;
    write_tree(&tree, &tree_path)?;
    let json_path = config.output_file(MARTINGALE_FILE)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&json_path, json.as_bytes())?;
    let worst = report.records.iter().map(|r| r.max_discrepancy).fold(0.0, f64::max);
    outcome.note(format!("{} individuals, max discrepancy {worst:.2e}", report.individuals));
    outcome.wrote(tree_path);
    outcome.wrote(json_path);
    if config.strict && !report.all_agree {
        return Err(CliError::Strict("representations disagree beyond their allowance".into()));
    }
    Ok(outcome)
}

fn write_tree(tree: &cmj_core::PopulationTree, path: &std::path::Path) -> CliResult<()> {
    let mut buf = Vec::new();
    write_tree_csv(tree, &mut buf)?;
    write_file(path, &buf)
}
