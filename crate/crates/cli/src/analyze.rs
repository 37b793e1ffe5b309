use cmj_core::analyze;

use crate::config::{require_assumptions, write_file, RunConfig};
use crate::error::CliResult;
use crate::Outcome;

pub const REPORT_FILE: &str = "spectral_report.json";

pub fn cmd_analyze(config: &RunConfig) -> CliResult<Outcome> {
    let model = config.load_model()?;
    require_assumptions(&model)?;
    let report = analyze(&model, config.overrides.region)?;
    let path = config.output_file(REPORT_FILE)?;
    write_file(&path, report.to_json().as_bytes())?;
    let mut outcome = Outcome::default();
    outcome.note(format!("alpha = {}", report.alpha));
    for (root, data) in report.roots.iter().zip(&report.laurent) {
        outcome.note(format!(
            "root {} {:+}i: pole order {}, identity residual {:.2e}",
            root.re, root.im, root.order, data.identity_residual
        ));
    }
    outcome.wrote(path);
    Ok(outcome)
}
