use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmj_cli::montecarlo::MonteCarloSummary;
use cmj_cli::simulate::SimulationReport;
use cmj_cli::validate::{Status, ValidationSummary};
use cmj_core::montecarlo::read_curve_csv;
use cmj_core::population::read_tree_csv;
use cmj_core::SpectralReport;
use serde_json::Value;
use tempfile::TempDir;

fn cmj(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmj"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn error_kind(o: &Output) -> String {
    let v: Value = serde_json::from_slice(&o.stderr).expect("stderr is JSON");
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn write_model(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("model.json");
    fs::write(&path, json).unwrap();
    path
}

const A1_VIOLATION: &str =
    r#"{"p": 1, "entries": [{"from": 1, "to": 1, "process": {"kind": "fixed_atom", "time": 0, "count": 2}}]}"#;

#[test]
fn analyze_reports_the_example1_residue() {
    let dir = TempDir::new().unwrap();
    let o = cmj(&["analyze", "--example", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: SpectralReport = serde_json::from_str(&read(dir.path(), "spectral_report.json")).unwrap();
    assert!((report.alpha - 1.0).abs() <= 1e-10);
    assert_eq!(report.roots.len(), 1);
    assert_eq!(report.roots[0].order, 1);
    let a = &report.laurent[0].matrices[0];
    let expected = [1.0, 4.0 / 3.0, 0.0, 0.0];
    for (z, e) in a.data().iter().zip(expected) {
        assert!((z.re - e).abs() <= 1e-6 && z.im.abs() <= 1e-6);
    }
}

#[test]
fn analyze_reports_the_example2_double_root() {
    for rate in [1.0, 2.0] {
        let dir = TempDir::new().unwrap();
        let o = cmj(&["analyze", "--example", "2", "--rate", &rate.to_string()], dir.path());
        assert_eq!(code(&o), 0);
        let report: SpectralReport = serde_json::from_str(&read(dir.path(), "spectral_report.json")).unwrap();
        let (root, entry) = report.nearest(cmj_core::Complex64::new(rate, 0.0)).unwrap();
        assert_eq!(root.order, 2);
        let a1 = [rate, 2.0 * rate, 0.0, rate];
        let a2 = [0.0, rate * rate, 0.0, 0.0];
        for (m, expected) in entry.matrices.iter().zip([a1, a2]) {
            for (z, e) in m.data().iter().zip(expected) {
                assert!((z.re - e).abs() <= 1e-6 && z.im.abs() <= 1e-6, "rate {rate}: {z} vs {e}");
            }
        }
    }
}

#[test]
fn malformed_model_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "{\"p\": 2,\n \"entries\": [}");
    let o = cmj(&["analyze", "--model", model.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    let v: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "parse");
    assert_eq!(v["error"]["line"], 2);
}

#[test]
fn unknown_fields_and_missing_files_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), r#"{"p": 1, "colour": "red"}"#);
    assert_eq!(code(&cmj(&["analyze", "--model", model.to_str().unwrap()], dir.path())), 1);
    let o = cmj(&["analyze", "--model", "/nonexistent/model.json"], dir.path());
    assert_eq!((code(&o), error_kind(&o).as_str()), (1, "io"));
}

#[test]
fn usage_errors_exit_with_status_one() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["analyze"],
        vec!["analyze", "--example", "7"],
        vec!["frobnicate"],
        vec!["simulate", "--example", "1", "--t-grid", "2,1"],
        vec!["simulate", "--example", "1", "--lambda", "1"],
        vec!["analyze", "--example", "1", "--region", "2,1,0,1"],
    ] {
        let o = cmj(&args, dir.path());
        assert_eq!(code(&o), 1, "{args:?}");
        assert_eq!(error_kind(&o), "usage", "{args:?}");
    }
}

#[test]
fn a1_violation_is_an_assumption_failure() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), A1_VIOLATION);
    let path = model.to_str().unwrap();
    let o = cmj(&["analyze", "--model", path], dir.path());
    assert_eq!((code(&o), error_kind(&o).as_str()), (2, "assumption"));

    let o = cmj(&["validate", "--model", path], dir.path());
    assert_eq!(code(&o), 0);
    let summary: ValidationSummary = serde_json::from_str(&read(dir.path(), "validation.json")).unwrap();
    assert_eq!(summary.checks[0].name, "a1_atom_at_zero");
    assert_eq!(summary.checks[0].status, Status::Fail);
    assert!(summary.checks[1..].iter().all(|c| c.status == Status::Skipped));
    assert!(!summary.passed);
    assert_eq!(code(&cmj(&["validate", "--model", path, "--strict"], dir.path())), 4);
}

#[test]
fn validate_passes_on_the_built_in_examples() {
    for (example, rate) in [("1", "1"), ("2", "1"), ("2", "2"), ("nerman", "1"), ("primitive", "1")] {
        let dir = TempDir::new().unwrap();
        let o = cmj(&["validate", "--example", example, "--rate", rate, "--strict"], dir.path());
        assert_eq!(code(&o), 0, "example {example}: {}", String::from_utf8_lossy(&o.stderr));
        let summary: ValidationSummary = serde_json::from_str(&read(dir.path(), "validation.json")).unwrap();
        assert!(summary.passed);
        let oracle = summary.checks.iter().find(|c| c.name == "example_oracle").unwrap();
        let expect_oracle = matches!(example, "1" | "2");
        assert_eq!(oracle.status == Status::Pass, expect_oracle);
        let primitive = summary.checks.iter().find(|c| c.name == "primitive_case").unwrap();
        assert_eq!(primitive.status == Status::Pass, matches!(example, "primitive" | "nerman"));
    }
}

#[test]
fn simulate_agrees_across_representations_and_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["simulate", "--example", "1", "--seed", "42", "--t-grid", "0,1,2"];
    assert_eq!(code(&cmj(&args, a.path())), 0);
    assert_eq!(code(&cmj(&args, b.path())), 0);
    for name in ["tree.csv", "martingale.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let report: SimulationReport = serde_json::from_str(&read(a.path(), "martingale.json")).unwrap();
    assert!(report.all_agree);
    assert_eq!(report.records.len(), 3);
    for r in &report.records {
        assert!(r.max_discrepancy <= 1e-10 + r.truncation_bounds.iter().sum::<f64>());
    }
    let rows = read_tree_csv(fs::File::open(a.path().join("tree.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), report.individuals);
}

#[test]
fn deterministic_chain_matches_the_golden_tree() {
    let dir = TempDir::new().unwrap();
    let o = cmj(&["simulate", "--example", "chain", "--horizon", "3"], dir.path());
    assert_eq!(code(&o), 0);
    let golden = include_str!("golden/chain_tree.csv");
    assert_eq!(read(dir.path(), "tree.csv"), golden);
    assert!(!dir.path().join("martingale.json").exists());
}

#[test]
fn montecarlo_rejects_too_few_replicas() {
    let dir = TempDir::new().unwrap();
    let o = cmj(&["montecarlo", "--example", "1", "--replicas", "1"], dir.path());
    assert_eq!((code(&o), error_kind(&o).as_str()), (1, "precondition"));
}

#[test]
fn montecarlo_from_type2_gives_a_zero_curve() {
    let dir = TempDir::new().unwrap();
    let o = cmj(&["montecarlo", "--example", "1", "--ancestor", "2", "--replicas", "200"], dir.path());
    assert_eq!(code(&o), 0);
    let (header, rows) = read_curve_csv(fs::File::open(dir.path().join("moment_curve.csv")).unwrap()).unwrap();
    assert_eq!(header[0], "t");
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1..].iter().all(|&x| x == 0.0)));
    let summary: MonteCarloSummary = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    assert!(summary.mean_identity.passed);
}

#[test]
fn montecarlo_output_does_not_depend_on_threads() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["montecarlo", "--example", "1", "--replicas", "300", "--seed", "5", "--t-grid", "0,1,2"];
    let mut one = args.to_vec();
    one.extend(["--threads", "1"]);
    let mut three = args.to_vec();
    three.extend(["--threads", "3"]);
    assert_eq!(code(&cmj(&one, a.path())), 0);
    assert_eq!(code(&cmj(&three, b.path())), 0);
    for name in ["moment_curve.csv", "summary.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let summary: MonteCarloSummary = serde_json::from_str(&read(a.path(), "summary.json")).unwrap();
    assert!(summary.mean_identity.passed);
    assert_eq!(summary.n_replicas, 300);
}

#[test]
fn lambda_selects_the_nearest_verified_root() {
    let dir = TempDir::new().unwrap();
    let o = cmj(&["simulate", "--example", "1", "--lambda", "1.0004,0.0002"], dir.path());
    assert_eq!(code(&o), 0);
    let o = cmj(&["simulate", "--example", "1", "--lambda", "1.5,0"], dir.path());
    assert_eq!((code(&o), error_kind(&o).as_str()), (1, "root_selection"));
}
