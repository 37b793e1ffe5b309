//! Replica orchestration and the statistics built on it.
//!
//! Replica `r` of a plan is simulated from seed `mix(master_seed, r)`.
//! Replicas run on the ambient rayon pool and are reduced in ascending
//! `r`, so a plan always yields the same curve.

use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, CMatrix};
use crate::martingale::{self, complex_object, MartingaleValue};
use crate::models::{Ancestor, OffspringModel};
use crate::population::{simulate_with, PopulationTree, SimOptions, DEFAULT_POPULATION_CAP};
use crate::rng;
use crate::spectral::{self, LaurentData};

pub const MIN_REPLICAS: usize = 100;

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub model: OffspringModel,
    /// Root `λ`, its pole order and `𝐀_λ`.
    pub laurent: LaurentData,
    pub q: f64,
    pub t_grid: Vec<f64>,
    pub n_replicas: usize,
    pub master_seed: u64,
    /// Half-width of acceptance bands, in standard errors.
    pub tolerance: f64,
    /// Largest admissible truncation bound per replica and time.
    pub tail_tolerance: f64,
    pub population_cap: usize,
    /// Drop replicas that hit the population cap instead of failing.
    pub exclude_failed: bool,
}

impl ExperimentPlan {
    /// Plan with `q = 2`, 3σ bands and tail tolerance `1e-8`.
    pub fn new(
        model: OffspringModel,
        laurent: LaurentData,
        t_grid: Vec<f64>,
        n_replicas: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            model,
            laurent,
            q: 2.0,
            t_grid,
            n_replicas,
            master_seed,
            tolerance: 3.0,
            tail_tolerance: 1e-8,
            population_cap: DEFAULT_POPULATION_CAP,
            exclude_failed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(m));
        if self.t_grid.is_empty() {
            return bad("t grid is empty".into());
        }
        if self.t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("t grid values must be finite and nonnegative".into());
        }
        if self.t_grid.windows(2).any(|w| w[0] > w[1]) {
            return bad("t grid must be sorted".into());
        }
        if self.n_replicas < MIN_REPLICAS {
            return bad(format!("need at least {MIN_REPLICAS} replicas, got {}", self.n_replicas));
        }
        if !(self.q > 1.0 && self.q <= 2.0) {
            return bad(format!("q = {} must lie in (1, 2]", self.q));
        }
        if !(self.tail_tolerance > 0.0) {
            return bad("tail tolerance must be positive".into());
        }
        if self.laurent.stacked.cols() != self.model.p() {
            return bad("Laurent data does not match the model".into());
        }
        Ok(())
    }

    fn horizon(&self) -> f64 {
        self.t_grid.last().copied().unwrap_or(0.0)
    }
}

/// Statistics of `W_t(λ)` at one grid time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub mean: CMatrix,
    /// Standard errors of the real parts, row-major.
    pub se_re: Vec<f64>,
    /// Standard errors of the imaginary parts, row-major.
    pub se_im: Vec<f64>,
    /// Estimate of `E‖W_t(λ)‖_HS^q`.
    pub q_moment: f64,
    pub q_moment_se: f64,
    /// Largest truncation bound over replicas.
    pub truncation_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentCurve {
    #[serde(with = "complex_object")]
    pub lambda: Complex64,
    pub pole_order: usize,
    pub q: f64,
    pub n_replicas: usize,
    /// Replica indices dropped for hitting the population cap.
    pub excluded: Vec<usize>,
    /// `E W_0(λ)`: `(I ⊗ e_i)𝐀_λ` averaged over the ancestor law.
    pub expected: CMatrix,
    /// Mean age at childbearing under the Perron weighting, when defined.
    pub mean_generation_time: Option<f64>,
    pub points: Vec<CurvePoint>,
    /// `samples[r][i]` is `W_{t_i}` on the `r`-th retained replica.
    #[serde(skip)]
    pub samples: Vec<Vec<CMatrix>>,
}

struct ReplicaOutcome {
    values: Vec<CMatrix>,
    bounds: Vec<f64>,
}

const WINDOW_STEP: f64 = 2.0;
const MAX_WINDOW_RETRIES: usize = 30;

/// How far past the horizon offspring are sampled.
#[derive(Clone, Copy, Debug)]
pub struct TailPolicy {
    /// First window tried after the horizon.
    pub initial_window: f64,
    /// Largest admissible truncation bound at any grid time.
    pub tolerance: f64,
    pub population_cap: usize,
}

impl TailPolicy {
    /// Window that should meet `tolerance` on a typical path grown to
    /// `horizon` at rate `growth`; paths that need more retry with a
    /// longer one.
    pub fn new(model: &OffspringModel, laurent: &LaurentData, horizon: f64, growth: f64, tolerance: f64) -> Self {
        let lambda = laurent.root.lambda;
        let k = laurent.pole_order();
        let norm = (0..model.p()).map(|j| kernels::hs_norm(&laurent.type_block(j))).fold(0.0, f64::max);
        let mut h = 1.0;
        if norm > 0.0 {
            let parents = model.p() as f64 * (1.0 + (growth * horizon).exp());
            let front = parents * (k as f64).sqrt() * std::f64::consts::E * 2f64.powi(k as i32) * norm;
            while front * martingale::tail_bound(model, lambda, k, h) > tolerance && h < 1e4 {
                h += WINDOW_STEP;
            }
        }
        Self { initial_window: h, tolerance, population_cap: DEFAULT_POPULATION_CAP }
    }
}

/// Simulates to `max(t_grid)` and widens the tail window until the
/// coming-generation values on the grid are certified within the
/// policy's tolerance.
pub fn certified_tree(
    model: &OffspringModel,
    laurent: &LaurentData,
    t_grid: &[f64],
    seed: u64,
    policy: &TailPolicy,
) -> Result<(PopulationTree, Vec<MartingaleValue>)> {
    let horizon = t_grid.iter().copied().fold(0.0, f64::max);
    let mut h = policy.initial_window;
    let mut worst = f64::INFINITY;
    for _ in 0..MAX_WINDOW_RETRIES {
        let opts = SimOptions { horizon, tail_cutoff: horizon + h, seed, population_cap: policy.population_cap };
        let tree = simulate_with(model, &opts)?;
        let values = t_grid
            .iter()
            .map(|&t| martingale::eval_w_coming_gen(&tree, laurent, t, None))
            .collect::<Result<Vec<_>>>()?;
        worst = values.iter().map(|v| v.truncation_bound).fold(0.0, f64::max);
        if worst <= policy.tolerance {
            return Ok((tree, values));
        }
        log::debug!("seed {seed}: window {h} leaves bound {worst:e}");
        let shortfall = (worst / policy.tolerance).ln() / laurent.root.lambda.re;
        h += if shortfall.is_finite() { shortfall.max(0.0) + WINDOW_STEP } else { WINDOW_STEP };
    }
    Err(Error::Truncation { bound: worst, tolerance: policy.tolerance })
}

fn run_replica(plan: &ExperimentPlan, r: usize, policy: &TailPolicy) -> Result<ReplicaOutcome> {
    let seed = rng::mix(plan.master_seed, r as u64);
    let (_, values) = certified_tree(&plan.model, &plan.laurent, &plan.t_grid, seed, policy)?;
    Ok(ReplicaOutcome {
        bounds: values.iter().map(|v| v.truncation_bound).collect(),
        values: values.into_iter().map(|v| v.value).collect(),
    })
}

fn expected_initial(plan: &ExperimentPlan) -> CMatrix {
    match plan.model.ancestor() {
        Ancestor::Fixed(i) => martingale::initial_value(&plan.laurent, *i),
        Ancestor::Distribution(pi) => {
            let mut acc = CMatrix::zeros(plan.laurent.pole_order(), plan.model.p());
            for (i, &w) in pi.iter().enumerate() {
                acc = &acc + &martingale::initial_value(&plan.laurent, i).scale(Complex64::new(w, 0.0));
            }
            acc
        }
    }
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Runs every replica of the plan and aggregates the statistics.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<MomentCurve> {
    plan.validate()?;
    let perron = spectral::find_malthusian(&plan.model).ok();
    let growth = perron.as_ref().map_or(plan.laurent.root.lambda.re, |p| p.alpha);
    let mean_generation_time = perron.as_ref().filter(|p| p.normalized).and_then(|p| {
        let d = plan.model.laplace_derivative(Complex64::new(p.alpha, 0.0), 1).ok()?;
        let n = p.right_vec.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc -= p.left_vec[i] * d[(i, j)].re * p.right_vec[j];
            }
        }
        Some(acc)
    });
    let mut policy = TailPolicy::new(&plan.model, &plan.laurent, plan.horizon(), growth, plan.tail_tolerance);
    policy.population_cap = plan.population_cap;

    let outcomes: Vec<Result<ReplicaOutcome>> =
        (0..plan.n_replicas).into_par_iter().map(|r| run_replica(plan, r, &policy)).collect();
    let mut samples = Vec::with_capacity(plan.n_replicas);
    let mut bounds = vec![0.0f64; plan.t_grid.len()];
    let mut excluded = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                for (b, x) in bounds.iter_mut().zip(&o.bounds) {
                    *b = b.max(*x);
                }
                samples.push(o.values);
            }
            Err(Error::PopulationCap(cap)) if plan.exclude_failed => {
                log::warn!("replica {r} excluded: population cap {cap}");
                excluded.push(r);
            }
            Err(e) => return Err(e),
        }
    }
    let n = samples.len();
    if n < 2 {
        return Err(Error::Precondition("fewer than two replicas completed".into()));
    }

    let k = plan.laurent.pole_order();
    let p = plan.model.p();
    let mut points = Vec::with_capacity(plan.t_grid.len());
    for (i, &t) in plan.t_grid.iter().enumerate() {
        let mut mean = CMatrix::zeros(k, p);
        let mut se_re = Vec::with_capacity(k * p);
        let mut se_im = Vec::with_capacity(k * p);
        for c in 0..k * p {
            let (mr, sr) = mean_and_se(samples.iter().map(|s| s[i].data()[c].re), n);
            let (mi, si) = mean_and_se(samples.iter().map(|s| s[i].data()[c].im), n);
            mean[(c / p, c % p)] = Complex64::new(mr, mi);
            se_re.push(sr);
            se_im.push(si);
        }
        let (q_moment, q_moment_se) =
            mean_and_se(samples.iter().map(|s| kernels::hs_norm(&s[i]).powf(plan.q)), n);
        points.push(CurvePoint { t, mean, se_re, se_im, q_moment, q_moment_se, truncation_bound: bounds[i] });
    }
    Ok(MomentCurve {
        lambda: plan.laurent.root.lambda,
        pole_order: k,
        q: plan.q,
        n_replicas: n,
        excluded,
        expected: expected_initial(plan),
        mean_generation_time,
        points,
        samples,
    })
}

/// Outcome of comparing componentwise means against `E W_0(λ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeanIdentityReport {
    pub band: f64,
    /// Real and imaginary parts of every component at every time.
    pub checks: usize,
    pub outside: usize,
    pub max_abs_z: f64,
    /// Same test for `W_t − W_s` against 0 over all grid pairs `s < t`.
    pub increment_checks: usize,
    pub increment_outside: usize,
    /// Allowed fraction of checks outside the band.
    pub allowed_fraction: f64,
    pub passed: bool,
}

const ALLOWED_FRACTION: f64 = 0.05;

/// `|x − expected| ≤ band·se`, or agreement up to roundoff when `se = 0`.
fn within(x: f64, expected: f64, se: f64, band: f64) -> (bool, f64) {
    let diff = (x - expected).abs();
    if se == 0.0 {
        (diff <= 1e-12 * expected.abs().max(1.0), if diff == 0.0 { 0.0 } else { f64::INFINITY })
    } else {
        (diff <= band * se, diff / se)
    }
}

pub fn mean_identity_check(curve: &MomentCurve, band: f64) -> MeanIdentityReport {
    let mut checks = 0;
    let mut outside = 0;
    let mut max_z = 0.0f64;
    for pt in &curve.points {
        for (c, (m, e)) in pt.mean.data().iter().zip(curve.expected.data()).enumerate() {
            for (x, y, se) in [(m.re, e.re, pt.se_re[c]), (m.im, e.im, pt.se_im[c])] {
                let (ok, z) = within(x, y, se, band);
                checks += 1;
                if !ok {
                    outside += 1;
                }
                if z.is_finite() {
                    max_z = max_z.max(z);
                }
            }
        }
    }

    let mut increment_checks = 0;
    let mut increment_outside = 0;
    let n = curve.samples.len();
    let m = curve.points.len();
    for a in 0..m {
        for b in a + 1..m {
            let len = curve.expected.data().len();
            for c in 0..len {
                for part in [0, 1] {
                    let diffs = curve.samples.iter().map(|s| {
                        let d = s[b].data()[c] - s[a].data()[c];
                        if part == 0 { d.re } else { d.im }
                    });
                    let (mean, se) = mean_and_se(diffs, n);
                    increment_checks += 1;
                    if !within(mean, 0.0, se, band).0 {
                        increment_outside += 1;
                    }
                }
            }
        }
    }
    let frac = |o: usize, c: usize| if c == 0 { 0.0 } else { o as f64 / c as f64 };
    let passed = frac(outside, checks) <= ALLOWED_FRACTION
        && frac(increment_outside, increment_checks) <= ALLOWED_FRACTION;
    MeanIdentityReport {
        band,
        checks,
        outside,
        max_abs_z: max_z,
        increment_checks,
        increment_outside,
        allowed_fraction: ALLOWED_FRACTION,
        passed,
    }
}

/// Plateau statistics of the `q`-moment curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub applicable: bool,
    pub note: Option<String>,
    pub times: Vec<f64>,
    pub q_moments: Vec<f64>,
    pub q_moment_se: Vec<f64>,
    /// Paired per-replica increments of `‖W‖^q` between consecutive times.
    pub increments: Vec<f64>,
    pub increment_se: Vec<f64>,
    /// Last increment over first increment.
    pub plateau_ratio: Option<f64>,
    /// Whether the 3σ bands of the first and last increments are disjoint.
    pub bands_separated: bool,
    /// `q_moment(t_last) / q_moment(t_prev)`.
    pub final_growth: Option<f64>,
    pub growth_factor: f64,
    pub unbounded_flag: bool,
    pub bounded: bool,
}

pub const PLATEAU_RATIO_MAX: f64 = 0.25;
pub const DEFAULT_GROWTH_FACTOR: f64 = 1.5;
const MIN_POINTS: usize = 4;

pub fn boundedness_diagnostic(curve: &MomentCurve, growth_factor: f64) -> BoundednessReport {
    let times: Vec<f64> = curve.points.iter().map(|p| p.t).collect();
    let q_moments: Vec<f64> = curve.points.iter().map(|p| p.q_moment).collect();
    let q_moment_se: Vec<f64> = curve.points.iter().map(|p| p.q_moment_se).collect();
    let n = curve.samples.len();
    let mut increments = Vec::new();
    let mut increment_se = Vec::new();
    for i in 1..curve.points.len() {
        let diffs = curve
            .samples
            .iter()
            .map(|s| kernels::hs_norm(&s[i]).powf(curve.q) - kernels::hs_norm(&s[i - 1]).powf(curve.q));
        let (m, se) = mean_and_se(diffs, n);
        increments.push(m);
        increment_se.push(se);
    }

    let mut note = None;
    let span = times.last().unwrap_or(&0.0) - times.first().unwrap_or(&0.0);
    let mut applicable = times.len() >= MIN_POINTS;
    if !applicable {
        note = Some(format!("needs at least {MIN_POINTS} grid points"));
    } else if let Some(g) = curve.mean_generation_time {
        if span < 2.0 * g {
            applicable = false;
            note = Some(format!("grid spans {span}, less than two generation times ({g})"));
        }
    }

    let (plateau_ratio, bands_separated) = match (increments.first(), increments.last()) {
        (Some(&first), Some(&last)) if increments.len() >= 2 => {
            let sf = increment_se[0];
            let sl = *increment_se.last().unwrap();
            let ratio = if first != 0.0 { Some(last / first) } else { None };
            (ratio, first - 3.0 * sf > last + 3.0 * sl)
        }
        _ => (None, false),
    };
    let m = q_moments.len();
    let (final_growth, unbounded_flag) = if m >= 2 && q_moments[m - 2] > 0.0 {
        let g = q_moments[m - 1] / q_moments[m - 2];
        let separated = q_moments[m - 1] - 3.0 * q_moment_se[m - 1] > q_moments[m - 2] + 3.0 * q_moment_se[m - 2];
        (Some(g), g > growth_factor && separated)
    } else {
        (None, false)
    };
    let constant = increments.iter().all(|&d| d == 0.0) && increment_se.iter().all(|&s| s == 0.0);
    let bounded = applicable
        && !unbounded_flag
        && (constant || (plateau_ratio.is_some_and(|r| r <= PLATEAU_RATIO_MAX) && bands_separated));
    BoundednessReport {
        applicable,
        note,
        times,
        q_moments,
        q_moment_se,
        increments,
        increment_se,
        plateau_ratio,
        bands_separated,
        final_growth,
        growth_factor,
        unbounded_flag,
        bounded,
    }
}

/// Partial geometric sums of `𝓛μ(q(θ−δ))` against the resolvent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometricSeriesReport {
    /// `q(θ − δ)`.
    pub point: f64,
    pub alpha: f64,
    pub spectral_radius: f64,
    /// `(I − 𝓛μ(point))^{-1} 𝟏`.
    pub direct: Vec<f64>,
    /// `Σ_{n ≤ N} 𝓛μ(point)^n 𝟏`.
    pub partial: Vec<f64>,
    pub terms: usize,
    pub max_difference: f64,
    pub passed: bool,
}

const SERIES_TERM_TOL: f64 = 1e-16;
const SERIES_MAX_TERMS: usize = 1_000_000;

pub fn geometric_series_check(model: &OffspringModel, q: f64, theta: f64, delta: f64) -> Result<GeometricSeriesReport> {
    let alpha = spectral::find_malthusian(model)?.alpha;
    let point = q * (theta - delta);
    if !(point > alpha) {
        return Err(Error::Precondition(format!("q(θ − δ) = {point} must exceed α = {alpha}")));
    }
    let m = model.laplace_real(point)?;
    let rho = kernels::spectral_radius(&m)?.rho;
    let p = model.p();
    let ones = CMatrix::from_real(p, 1, &vec![1.0; p])?;
    let direct = (&CMatrix::identity(p) - &m).inverse()?.matmul(&ones);
    let mut term = ones.clone();
    let mut sum = ones;
    let mut terms = 0;
    while term.max_abs() > SERIES_TERM_TOL * sum.max_abs() && terms < SERIES_MAX_TERMS {
        term = m.matmul(&term);
        sum = &sum + &term;
        terms += 1;
    }
    let max_difference = direct.max_abs_diff(&sum);
    Ok(GeometricSeriesReport {
        point,
        alpha,
        spectral_radius: rho,
        direct: direct.re(),
        partial: sum.re(),
        terms,
        max_difference,
        passed: rho < 1.0 && max_difference <= 1e-10,
    })
}

/// Column names of the curve CSV for a `k×p` value.
pub fn curve_header(k: usize, p: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["mean_re", "mean_im", "se_re", "se_im"] {
        for a in 1..=k {
            for c in 1..=p {
                h.push(format!("{prefix}_{a}_{c}"));
            }
        }
    }
    h.extend(["q_moment", "q_moment_se", "truncation_bound"].map(String::from));
    h
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// One row per grid time; see [`curve_header`].
pub fn write_curve_csv<W: Write>(curve: &MomentCurve, out: W) -> Result<()> {
    let (k, p) = curve.expected.shape();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(curve_header(k, p)).map_err(csv_error)?;
    for pt in &curve.points {
        let mut row = vec![pt.t];
        row.extend(pt.mean.data().iter().map(|z| z.re));
        row.extend(pt.mean.data().iter().map(|z| z.im));
        row.extend(&pt.se_re);
        row.extend(&pt.se_im);
        row.extend([pt.q_moment, pt.q_moment_se, pt.truncation_bound]);
        w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric rows of a curve CSV.
pub fn read_curve_csv<R: Read>(input: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Io(std::io::Error::other(e))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
