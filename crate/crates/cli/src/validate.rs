//! The invariant suite behind `cmj validate`.

use cmj_core::models::sample_offspring;
use cmj_core::spectral::perron_root_at;
use cmj_core::{
    analyze, certified_tree, check_moment_condition, eval_w_characteristic, eval_w_increments, exp_matrix,
    geometric_series_check, hs_norm, kronecker, rng, validate_assumptions, CMatrix, Complex64, OffspringModel,
    SpectralReport, TailPolicy,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{select_root, write_file, ModelSource, RunConfig};
use crate::error::{CliError, CliResult};
use crate::simulate::AGREEMENT_TOL;
use crate::Outcome;

pub const VALIDATION_FILE: &str = "validation.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
    NotApplicable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub measured: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl Check {
    fn measured(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        let status = if measured <= tolerance { Status::Pass } else { Status::Fail };
        Self { name: name.into(), status, measured: Some(measured), tolerance: Some(tolerance), detail: detail.into() }
    }

    fn verdict(name: &str, passed: bool, measured: Option<f64>, detail: impl Into<String>) -> Self {
        let status = if passed { Status::Pass } else { Status::Fail };
        Self { name: name.into(), status, measured, tolerance: None, detail: detail.into() }
    }

    fn with_status(name: &str, status: Status, detail: impl Into<String>) -> Self {
        Self { name: name.into(), status, measured: None, tolerance: None, detail: detail.into() }
    }

    pub fn ok(&self) -> bool {
        matches!(self.status, Status::Pass | Status::NotApplicable)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub model: String,
    pub alpha: Option<f64>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Names of the checks after the assumption checks, in report order.
pub const SUITE: [&str; 11] = [
    "kernel_identities",
    "laplace_monte_carlo",
    "laplace_derivatives",
    "perron_root_monotone",
    "roots_and_winding",
    "laurent_identities",
    "representation_equivalence",
    "primitive_case",
    "geometric_series",
    "moment_condition",
    "example_oracle",
];

const KERNEL_CASES: usize = 200;
const LAPLACE_SAMPLES: usize = 20_000;
const LAPLACE_Z_MAX: f64 = 4.5;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;
const TREES: u64 = 10;
const MOMENT_SAMPLES: usize = 2_000;

pub fn cmd_validate(config: &RunConfig) -> CliResult<Outcome> {
    let model = config.load_model()?;
    let summary = run_suite(&config.describe_source(), &model, builtin_oracle(config), config.seed);
    let path = config.output_file(VALIDATION_FILE)?;
    write_file(&path, serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes())?;
    let mut outcome = Outcome::default();
    for c in &summary.checks {
        outcome.note(format!("{:<28} {:?}", c.name, c.status));
    }
    outcome.wrote(path);
    if config.strict && !summary.passed {
        let failed: Vec<&str> = summary.checks.iter().filter(|c| c.status == Status::Fail).map(|c| c.name.as_str()).collect();
        return Err(CliError::Strict(format!("failed checks: {}", failed.join(", "))));
    }
    Ok(outcome)
}

/// Known analysis results for a built-in model.
#[derive(Clone, Debug)]
pub enum Oracle {
    /// `α = 1`, a single simple root with residue `[[1, 4/3], [0, 0]]`.
    Example1,
    /// `α = rate`, a double root with `A_2 = [[0, α²], [0, 0]]` and
    /// `A_1 = [[α, 2α], [0, α]]`.
    Example2 { rate: f64 },
}

fn builtin_oracle(config: &RunConfig) -> Option<Oracle> {
    match &config.source {
        ModelSource::Builtin { name, rate } => match name.as_str() {
            "1" | "ex1" | "example1" => Some(Oracle::Example1),
            "2" | "ex2" | "example2" => Some(Oracle::Example2 { rate: *rate }),
            _ => None,
        },
        ModelSource::File(_) => None,
    }
}

pub fn run_suite(label: &str, model: &OffspringModel, oracle: Option<Oracle>, seed: u64) -> ValidationSummary {
    let assumptions = validate_assumptions(model);
    let mut checks = vec![Check {
        tolerance: Some(1.0),
        ..Check::verdict(
            "a1_atom_at_zero",
            assumptions.a1_passed,
            Some(assumptions.a1_spectral_radius),
            "spectral radius of the atom at zero, must be below 1",
        )
    }];
    if !assumptions.a1_passed {
        checks.push(Check::with_status("a2_malthusian", Status::Skipped, "A1 fails"));
        checks.extend(SUITE.iter().map(|name| Check::with_status(name, Status::Skipped, "A1 fails")));
        return ValidationSummary { model: label.to_string(), alpha: None, checks, passed: false };
    }
    let alpha = match assumptions.alpha {
        Some(alpha) => {
            checks.push(Check::verdict("a2_malthusian", true, Some(alpha), "Malthusian parameter"));
            alpha
        }
        None => {
            let detail = assumptions.a2_detail.unwrap_or_default();
            checks.push(Check::verdict("a2_malthusian", false, None, detail));
            checks.push(kernel_check(KERNEL_CASES, seed));
            checks.extend(SUITE[1..].iter().map(|name| Check::with_status(name, Status::Skipped, "A2 fails")));
            return ValidationSummary { model: label.to_string(), alpha: None, checks, passed: false };
        }
    };

    checks.push(kernel_check(KERNEL_CASES, seed));
    checks.push(laplace_mc_check(model, alpha, seed));
    checks.push(derivative_check(model, alpha));
    checks.push(monotone_check(model, alpha));
    match analyze(model, None) {
        Ok(report) => {
            checks.push(roots_check(&report));
            let worst = report.laurent.iter().map(|l| l.identity_residual).fold(0.0, f64::max);
            checks.push(Check::measured("laurent_identities", worst, 1e-8, "largest HS residual over roots"));
            checks.push(representation_check(model, alpha, seed));
            checks.push(primitive_check(&report));
            checks.push(series_check(model, alpha));
            checks.push(moment_check(model, alpha, &report, seed));
            checks.push(match &oracle {
                Some(o) => oracle_check(o, &report),
                None => Check::with_status("example_oracle", Status::NotApplicable, "not a built-in example"),
            });
        }
        Err(e) => {
            checks.push(Check::verdict("roots_and_winding", false, None, e.to_string()));
            checks.extend(SUITE[5..].iter().map(|name| Check::with_status(name, Status::Skipped, "analysis failed")));
        }
    }
    let passed = checks.iter().all(Check::ok);
    ValidationSummary { model: label.to_string(), alpha: Some(alpha), checks, passed }
}

/// Largest relative residuals of the kernel identities over random cases.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct KernelResiduals {
    pub cases: usize,
    /// `exp(λ, x)·exp(λ, y)` against `exp(λ, x + y)`.
    pub exp_multiplicativity: f64,
    /// `exp(λ, x)` against `e^{x J_λ}` by scaling and squaring.
    pub jordan: f64,
    /// `(A⊗B)(C⊗D)` against `(AC)⊗(BD)`.
    pub mixed_product: f64,
}

fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    let data = (0..rows * cols)
        .map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
        .collect();
    CMatrix::new(rows, cols, data).expect("shape matches")
}

fn rel_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    hs_norm(&(a - b)) / hs_norm(b).max(1.0)
}

/// `e^{x J}` for the `k×k` Jordan block `J` at `λ`, by Taylor series on a
/// scaled copy followed by repeated squaring.
pub fn jordan_exponential(lambda: Complex64, x: f64, k: usize) -> CMatrix {
    let mut j = CMatrix::zeros(k, k);
    for i in 0..k {
        j[(i, i)] = lambda * x;
        if i + 1 < k {
            j[(i, i + 1)] = Complex64::new(x, 0.0);
        }
    }
    let norm = hs_norm(&j);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = j.scale(Complex64::new(0.5f64.powi(squarings), 0.0));
    let mut sum = CMatrix::identity(k);
    let mut term = CMatrix::identity(k);
    for n in 1..30 {
        term = term.matmul(&scaled).scale(Complex64::new(1.0 / n as f64, 0.0));
        sum = &sum + &term;
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    sum
}

pub fn kernel_residuals(cases: usize, seed: u64) -> KernelResiduals {
    let mut rng = rng::stream(rng::mix(seed, 0x6b65_726e));
    let mut out = KernelResiduals { cases, ..Default::default() };
    for _ in 0..cases {
        let lambda = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let k = rng.random_range(1..=6);
        let x = rng.random_range(-3.0..3.0);
        let y = rng.random_range(-3.0..3.0);
        let ex = exp_matrix(lambda, x, k).expect("k in range").matrix;
        let ey = exp_matrix(lambda, y, k).expect("k in range").matrix;
        let exy = exp_matrix(lambda, x + y, k).expect("k in range").matrix;
        out.exp_multiplicativity = out.exp_multiplicativity.max(rel_diff(&ex.matmul(&ey), &exy));
        out.jordan = out.jordan.max(rel_diff(&ex, &jordan_exponential(lambda, x, k)));

        let mut dim = || rng.random_range(1..=3usize);
        let (m, n, r, s, t, u) = (dim(), dim(), dim(), dim(), dim(), dim());
        let a = random_matrix(&mut rng, m, n);
        let b = random_matrix(&mut rng, s, t);
        let c = random_matrix(&mut rng, n, r);
        let d = random_matrix(&mut rng, t, u);
        let lhs = kronecker(&a, &b).matmul(&kronecker(&c, &d));
        let rhs = kronecker(&a.matmul(&c), &b.matmul(&d));
        out.mixed_product = out.mixed_product.max(rel_diff(&lhs, &rhs));
    }
    out
}

fn kernel_check(cases: usize, seed: u64) -> Check {
    let r = kernel_residuals(cases, seed);
    let passed = r.exp_multiplicativity <= 1e-10 && r.jordan <= 1e-10 && r.mixed_product <= 1e-12;
    Check::verdict(
        "kernel_identities",
        passed,
        Some(r.exp_multiplicativity.max(r.jordan).max(r.mixed_product)),
        format!(
            "{cases} cases: exp multiplicativity {:.1e} (≤ 1e-10), Jordan {:.1e} (≤ 1e-10), mixed product {:.1e} (≤ 1e-12)",
            r.exp_multiplicativity, r.jordan, r.mixed_product
        ),
    )
}

/// Largest z-score of the sampled transform of any entry against the
/// analytic one, at `α` and `α + i`.
fn laplace_mc_check(model: &OffspringModel, alpha: f64, seed: u64) -> Check {
    let p = model.p();
    let points = [Complex64::new(alpha, 0.0), Complex64::new(alpha, 1.0)];
    let mut worst: f64 = 0.0;
    for idx in 0..p * p {
        let spec = model.spec(idx / p, idx % p);
        if spec.is_empty() {
            continue;
        }
        let window = spec.negligible_horizon(alpha, 1, 1e-14);
        let mut rng = rng::stream(rng::mix(seed, 0x4c41_0000 + idx as u64));
        let samples: Vec<Vec<f64>> = (0..LAPLACE_SAMPLES).map(|_| sample_offspring(spec, window, &mut rng)).collect();
        for &z in &points {
            let exact = spec.laplace_derivative(z, 0);
            let values: Vec<Complex64> = samples.iter().map(|s| s.iter().map(|&x| (-z * x).exp()).sum()).collect();
            let n = LAPLACE_SAMPLES as f64;
            let mean = values.iter().sum::<Complex64>() / n;
            for (m, e, part) in [(mean.re, exact.re, 0), (mean.im, exact.im, 1)] {
                let var = values
                    .iter()
                    .map(|v| if part == 0 { v.re } else { v.im })
                    .map(|v| (v - m).powi(2))
                    .sum::<f64>()
                    / (n - 1.0);
                let se = (var / n).sqrt();
                let diff = (m - e).abs();
                let z_score = if se <= 1e-12 * e.abs().max(1.0) {
                    if diff <= 1e-10 * e.abs().max(1.0) { 0.0 } else { f64::INFINITY }
                } else {
                    diff / se
                };
                worst = worst.max(z_score);
            }
        }
    }
    Check::measured(
        "laplace_monte_carlo",
        worst,
        LAPLACE_Z_MAX,
        format!("largest |z| over entries, {LAPLACE_SAMPLES} draws each"),
    )
}

fn derivative_check(model: &OffspringModel, alpha: f64) -> Check {
    let z = Complex64::new(alpha + 0.5, 0.5);
    let mut worst: f64 = 0.0;
    for m in 1..=3 {
        let value = |w: Complex64| model.laplace_derivative(w, m - 1);
        let exact = match model.laplace_derivative(z, m) {
            Ok(e) => e,
            Err(e) => return Check::verdict("laplace_derivatives", false, None, e.to_string()),
        };
        let (Ok(up), Ok(down)) = (value(z + FD_STEP), value(z - FD_STEP)) else {
            return Check::verdict("laplace_derivatives", false, None, "difference stencil left the domain");
        };
        let fd = (&up - &down).scale(Complex64::new(0.5 / FD_STEP, 0.0));
        worst = worst.max(hs_norm(&(&fd - &exact)) / hs_norm(&exact).max(1e-3));
    }
    Check::measured("laplace_derivatives", worst, FD_TOL, format!("central differences at {z}, orders 1 to 3"))
}

fn monotone_check(model: &OffspringModel, alpha: f64) -> Check {
    let start = (model.abscissa().max(0.0) + 1e-6).max(alpha / 4.0);
    let end = 4.0 * alpha;
    let mut prev = f64::INFINITY;
    let mut worst_rise: f64 = 0.0;
    for i in 0..=200 {
        let theta = start + (end - start) * i as f64 / 200.0;
        match perron_root_at(model, theta) {
            Ok(rho) => {
                worst_rise = worst_rise.max((rho - prev) / prev.max(1e-300));
                prev = rho;
            }
            Err(e) => return Check::verdict("perron_root_monotone", false, None, e.to_string()),
        }
    }
    Check::measured("perron_root_monotone", worst_rise, 1e-12, format!("largest relative rise on [{start}, {end}]"))
}

fn roots_check(report: &SpectralReport) -> Check {
    let zero_orders: usize = report.roots.iter().map(|r| r.zero_order).sum();
    let residual = report.roots.iter().map(|r| r.residual).fold(0.0, f64::max);
    let has_alpha = report.roots.iter().any(|r| (r.re - report.alpha).abs() <= 1e-9 && r.im == 0.0);
    Check::verdict(
        "roots_and_winding",
        zero_orders == report.total_winding && residual <= 1e-10 && has_alpha,
        Some(residual),
        format!(
            "{} roots, winding {} vs zero orders {zero_orders}, alpha found: {has_alpha}",
            report.roots.len(),
            report.total_winding
        ),
    )
}

fn representation_check(model: &OffspringModel, alpha: f64, seed: u64) -> Check {
    const NAME: &str = "representation_equivalence";
    let laurent = match select_root(model, alpha, &crate::config::Overrides::defaults()) {
        Ok(l) => l,
        Err(e) => return Check::verdict(NAME, false, None, e.to_string()),
    };
    // about two generations of growth whatever the time scale
    let grid = [0.0, 1.0 / alpha, 2.0 / alpha];
    let policy = TailPolicy::new(model, &laurent, grid[2], alpha, 1e-8);
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for r in 0..TREES {
        let result = certified_tree(model, &laurent, &grid, rng::mix(seed, r), &policy).and_then(|(tree, coming)| {
            for (&t, a) in grid.iter().zip(&coming) {
                let b = eval_w_characteristic(&tree, &laurent, t, None)?;
                let c = eval_w_increments(&tree, &laurent, t, None)?;
                let allowance = AGREEMENT_TOL * hs_norm(&a.value).max(1.0)
                    + a.truncation_bound
                    + b.truncation_bound
                    + c.truncation_bound;
                let d = hs_norm(&(&a.value - &b.value)).max(hs_norm(&(&a.value - &c.value)));
                worst = worst.max(d);
                passed &= d <= allowance;
            }
            Ok(())
        });
        if let Err(e) = result {
            return Check::verdict(NAME, false, None, e.to_string());
        }
    }
    Check::verdict(NAME, passed, Some(worst), format!("{TREES} trees on grid {grid:?}; largest pairwise HS distance"))
}

fn primitive_check(report: &SpectralReport) -> Check {
    let r = &report.primitive;
    if !r.applicable {
        return Check::with_status("primitive_case", Status::NotApplicable, "Laplace matrix at alpha is not primitive");
    }
    Check::verdict(
        "primitive_case",
        r.passed,
        r.second_singular_value,
        format!(
            "pole order {}, commutation residual {:.1e}, projection residual {:.1e}",
            r.pole_order,
            r.commutation_residual.unwrap_or(f64::NAN),
            r.projection_residual.unwrap_or(f64::NAN)
        ),
    )
}

fn series_check(model: &OffspringModel, alpha: f64) -> Check {
    match geometric_series_check(model, 2.0, alpha, 0.25 * alpha) {
        Ok(r) => Check::verdict(
            "geometric_series",
            r.passed,
            Some(r.max_difference),
            format!("spectral radius {:.6} at {}, {} terms", r.spectral_radius, r.point, r.terms),
        ),
        Err(e) => Check::verdict("geometric_series", false, None, e.to_string()),
    }
}

fn moment_check(model: &OffspringModel, alpha: f64, report: &SpectralReport, seed: u64) -> Check {
    let order = report
        .roots
        .iter()
        .find(|r| (r.re - alpha).abs() <= 1e-9 && r.im == 0.0)
        .map_or(1, |r| r.order);
    match check_moment_condition(model, Complex64::new(alpha, 0.0), order, 2.0, MOMENT_SAMPLES, seed) {
        Ok(r) => Check::verdict(
            "moment_condition",
            r.finite && r.stable,
            Some(r.estimate),
            format!("estimate {:.4} ± {:.4}, doubled {:.4} ± {:.4}", r.estimate, r.standard_error, r.doubled_estimate, r.doubled_standard_error),
        ),
        Err(e) => Check::verdict("moment_condition", false, None, e.to_string()),
    }
}

fn oracle_check(oracle: &Oracle, report: &SpectralReport) -> Check {
    const NAME: &str = "example_oracle";
    let (alpha, order, expected): (f64, usize, Vec<[[f64; 2]; 2]>) = match *oracle {
        Oracle::Example1 => (1.0, 1, vec![[[1.0, 4.0 / 3.0], [0.0, 0.0]]]),
        Oracle::Example2 { rate: a } => (a, 2, vec![[[a, 2.0 * a], [0.0, a]], [[0.0, a * a], [0.0, 0.0]]]),
    };
    let Some((root, entry)) = report.nearest(Complex64::new(alpha, 0.0)) else {
        return Check::verdict(NAME, false, None, "no roots found");
    };
    let alpha_err = (report.alpha - alpha).abs();
    let mut matrix_err: f64 = 0.0;
    let shapes_match = entry.matrices.len() == expected.len();
    if shapes_match {
        for (m, e) in entry.matrices.iter().zip(&expected) {
            let e = CMatrix::from_real_rows(&[&e[0], &e[1]]).expect("2x2");
            matrix_err = matrix_err.max(m.max_abs_diff(&e));
        }
    }
    let single_root = !matches!(oracle, Oracle::Example1) || report.roots.len() == 1;
    let passed = alpha_err <= 1e-10 && root.order == order && shapes_match && matrix_err <= 1e-6 && single_root;
    Check::verdict(
        NAME,
        passed,
        Some(matrix_err),
        format!("alpha error {alpha_err:.1e}, pole order {} (expected {order}), {} roots", root.order, report.roots.len()),
    )
}
