//! `W_t(λ)` on a simulated tree in three equivalent forms.
//!
//! With `B_j = (I_k ⊗ e_j)𝐀_λ` (row `l` of `B_j` is row `j` of `A_{λ,l+1}`),
//! the value is the `k×p` matrix
//!
//! * coming generation: `Σ_{u ∈ 𝒞_t} exp(λ, −S(u)) B_{τ(u)}`;
//! * characteristic: `exp(λ, −t) Σ_{S(u) ≤ t} φ_u(t − S(u))` with
//!   `φ_u(s) = Σ_{children at ages X > s} exp(λ, s − X) B_{type}`;
//! * increments: `B_{τ(∅)} + Σ_{S(u) ≤ t} exp(λ, −S(u)) Y_u` with
//!   `Y_u = Σ_{children} exp(λ, −X) B_{type} − B_{τ(u)}`.
//!
//! All three sum the same sampled children, so they agree up to roundoff.
//! Children beyond the tail cutoff are never sampled; their expected
//! contribution is bounded in closed form and reported with the value.

use std::f64::consts::E;

use num_complex::Complex64;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, accumulate_toeplitz, exp_coefficients, CMatrix, MAX_EXP_BLOCK};
use crate::models::{OffspringModel, PointProcessSpec};
use crate::population::PopulationTree;
use crate::rng::{self, salt};
use crate::spectral::{self, LaurentData};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    ComingGeneration,
    Characteristic,
    IncrementSum,
}

/// `W_t(λ)` with the bound on the expected norm of the unsampled tail.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MartingaleValue {
    pub t: f64,
    #[serde(with = "complex_object")]
    pub lambda: Complex64,
    /// `k×p`.
    pub value: CMatrix,
    pub truncation_bound: f64,
    pub representation: Representation,
}

/// Serializes a complex number as `{"re": …, "im": …}`.
pub mod complex_object {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        re: f64,
        im: f64,
    }

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        Repr { re: z.re, im: z.im }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let r = Repr::deserialize(d)?;
        Ok(Complex64::new(r.re, r.im))
    }
}

/// `Y_u` for one individual.
#[derive(Clone, Debug)]
pub struct IncrementMatrix {
    pub individual: usize,
    /// `k×p`: the type-`τ(u)` row block of `Z_u(λ) − 𝐀_λ`.
    pub y: CMatrix,
}

/// The blocks `B_j` laid out for fast accumulation.
struct Blocks {
    lambda: Complex64,
    k: usize,
    p: usize,
    /// `data[j]` is `B_j` row-major (`k×p`).
    data: Vec<Vec<Complex64>>,
    norms: Vec<f64>,
}

impl Blocks {
    fn new(laurent: &LaurentData) -> Result<Self> {
        let k = laurent.pole_order();
        if k > MAX_EXP_BLOCK {
            return Err(Error::BlockTooLarge(k));
        }
        let p = laurent.stacked.cols();
        let data: Vec<Vec<Complex64>> = (0..p).map(|j| laurent.type_block(j).data().to_vec()).collect();
        let norms = (0..p).map(|j| kernels::hs_norm(&laurent.type_block(j))).collect();
        Ok(Self { lambda: laurent.root.lambda, k, p, data, norms })
    }

    fn zeros(&self) -> Vec<Complex64> {
        vec![ZERO; self.k * self.p]
    }

    /// `acc += exp(λ, x) B_j`.
    #[inline]
    fn add(&self, x: f64, j: usize, acc: &mut [Complex64]) {
        if self.norms[j] == 0.0 {
            return;
        }
        let mut c = [ZERO; MAX_EXP_BLOCK];
        exp_coefficients(self.lambda, x, &mut c[..self.k]);
        accumulate_toeplitz(&c[..self.k], &self.data[j], self.p, acc);
    }

    fn matrix(&self, data: Vec<Complex64>) -> CMatrix {
        CMatrix::from_vec_unchecked(self.k, self.p, data)
    }
}

fn check_inputs(tree: &PopulationTree, laurent: &LaurentData, t: f64) -> Result<()> {
    if laurent.stacked.cols() != tree.model().p() {
        return Err(Error::Precondition("Laurent data and tree have different type counts".into()));
    }
    if laurent.root.lambda.re <= 0.0 {
        return Err(Error::Precondition(format!(
            "Re λ = {} must be positive",
            laurent.root.lambda.re
        )));
    }
    if !(0.0..=tree.horizon()).contains(&t) {
        return Err(Error::TimeOutOfRange { t, horizon: tree.horizon() });
    }
    Ok(())
}

/// `Σ_{i,j} ∫_{[h,∞)} (1 + s^{k−1}) e^{−θs} μ^{i,j}(ds)` with `θ = Re λ`.
pub fn tail_bound(model: &OffspringModel, lambda: Complex64, k: usize, h: f64) -> f64 {
    model.weighted_tail(lambda.re, k.max(1), h)
}

/// Bound on the expected HS norm of the contribution of all children
/// later than the tail cutoff of parents born by `t`; `block_norms[j]` is
/// `‖B_j‖_HS`.
///
/// Uses `‖exp(λ, −x)‖_HS ≤ √k·e·e^{−θx}(1 + x^{k−1})` and
/// `1 + (a+b)^{k−1} ≤ c_k (1 + a^{k−1})(1 + b^{k−1})`, `c_k = max(1, 2^{k−2})`.
/// Each parent contributes `Σ_j ‖B_j‖ ∫_{[h,∞)} (1 + s^{k−1}) e^{−θs} μ^{τ,j}(ds)`
/// with `h` its remaining window, which never exceeds the all-entries
/// [`tail_bound`].
pub fn truncation_bound(tree: &PopulationTree, lambda: Complex64, k: usize, block_norms: &[f64], t: f64) -> f64 {
    let model = tree.model();
    let p = model.p();
    let theta = lambda.re;
    let ck = if k >= 2 { 2f64.powi(k as i32 - 2) } else { 1.0 };
    let front = (k as f64).sqrt() * E * ck;
    let cutoff = tree.tail_cutoff();
    tree.individuals()[..tree.born_by(t)]
        .iter()
        .map(|u| {
            let s = u.birth_time;
            let tail: f64 = (0..p)
                .filter(|&j| block_norms[j] > 0.0)
                .map(|j| block_norms[j] * model.spec(u.type_index, j).weighted_tail(theta, k, cutoff - s))
                .sum();
            if tail == 0.0 {
                0.0
            } else {
                front * (-theta * s).exp() * (1.0 + s.powi(k as i32 - 1)) * tail
            }
        })
        .sum()
}

fn finish(
    tree: &PopulationTree,
    blocks: &Blocks,
    t: f64,
    value: Vec<Complex64>,
    representation: Representation,
    tolerance: Option<f64>,
) -> Result<MartingaleValue> {
    let bound = truncation_bound(tree, blocks.lambda, blocks.k, &blocks.norms, t);
    if let Some(tol) = tolerance {
        if bound > tol {
            return Err(Error::Truncation { bound, tolerance: tol });
        }
    }
    Ok(MartingaleValue { t, lambda: blocks.lambda, value: blocks.matrix(value), truncation_bound: bound, representation })
}

/// `W_t(λ) = Σ_{u ∈ 𝒞_t} (exp(λ, −S(u)) ⊗ e_{τ(u)}) 𝐀_λ`.
pub fn eval_w_coming_gen(
    tree: &PopulationTree,
    laurent: &LaurentData,
    t: f64,
    tail_tolerance: Option<f64>,
) -> Result<MartingaleValue> {
    check_inputs(tree, laurent, t)?;
    let blocks = Blocks::new(laurent)?;
    let mut acc = blocks.zeros();
    for u in 0..tree.born_by(t) {
        let kids = tree.children(u);
        for r in &kids[kids.partition_point(|r| r.birth_time <= t)..] {
            blocks.add(-r.birth_time, r.type_index, &mut acc);
        }
    }
    finish(tree, &blocks, t, acc, Representation::ComingGeneration, tail_tolerance)
}

/// `φ_{λ,u}(s)` restricted to the type row block: `Σ_{X > s} exp(λ, s − X) B_{type}`,
/// zero for `s < 0`.
pub fn characteristic(tree: &PopulationTree, laurent: &LaurentData, u: usize, s: f64) -> Result<CMatrix> {
    let blocks = Blocks::new(laurent)?;
    Ok(blocks.matrix(characteristic_raw(tree, &blocks, u, s)))
}

fn characteristic_raw(tree: &PopulationTree, blocks: &Blocks, u: usize, s: f64) -> Vec<Complex64> {
    let mut acc = blocks.zeros();
    if s < 0.0 {
        return acc;
    }
    let kids = tree.children(u);
    let first = kids.partition_point(|r| r.age <= s);
    for r in &kids[first..] {
        blocks.add(s - r.age, r.type_index, &mut acc);
    }
    acc
}

/// `W_t(λ) = exp(λ, −t) Σ_u (I ⊗ e_{τ(u)}) φ_{λ,u}(t − S(u))`.
pub fn eval_w_characteristic(
    tree: &PopulationTree,
    laurent: &LaurentData,
    t: f64,
    tail_tolerance: Option<f64>,
) -> Result<MartingaleValue> {
    check_inputs(tree, laurent, t)?;
    let blocks = Blocks::new(laurent)?;
    let mut sum = blocks.zeros();
    for u in 0..tree.born_by(t) {
        let s = t - tree.individuals()[u].birth_time;
        let phi = characteristic_raw(tree, &blocks, u, s);
        sum.iter_mut().zip(&phi).for_each(|(a, b)| *a += b);
    }
    let mut c = [ZERO; MAX_EXP_BLOCK];
    exp_coefficients(blocks.lambda, -t, &mut c[..blocks.k]);
    let mut acc = blocks.zeros();
    accumulate_toeplitz(&c[..blocks.k], &sum, blocks.p, &mut acc);
    finish(tree, &blocks, t, acc, Representation::Characteristic, tail_tolerance)
}

/// `Y` for one parent of type `parent_type` whose type-`j` children were
/// born at the ages `ages_by_type[j]`.
pub fn increment_matrix(ages_by_type: &[Vec<f64>], parent_type: usize, laurent: &LaurentData) -> Result<CMatrix> {
    let blocks = Blocks::new(laurent)?;
    let mut acc = blocks.zeros();
    for (j, ages) in ages_by_type.iter().enumerate() {
        for &x in ages {
            blocks.add(-x, j, &mut acc);
        }
    }
    acc.iter_mut().zip(&blocks.data[parent_type]).for_each(|(a, b)| *a -= b);
    Ok(blocks.matrix(acc))
}

fn increment_raw(tree: &PopulationTree, blocks: &Blocks, u: usize) -> Vec<Complex64> {
    let mut acc = blocks.zeros();
    for r in tree.children(u) {
        blocks.add(-r.age, r.type_index, &mut acc);
    }
    let ty = tree.individuals()[u].type_index;
    acc.iter_mut().zip(&blocks.data[ty]).for_each(|(a, b)| *a -= b);
    acc
}

/// `Y_u` for every individual born by `t`, in arena order.
pub fn increments(tree: &PopulationTree, laurent: &LaurentData, t: f64) -> Result<Vec<IncrementMatrix>> {
    check_inputs(tree, laurent, t)?;
    let blocks = Blocks::new(laurent)?;
    Ok((0..tree.born_by(t))
        .map(|u| IncrementMatrix { individual: u, y: blocks.matrix(increment_raw(tree, &blocks, u)) })
        .collect())
}

/// `W_t(λ) = (I ⊗ e_{τ(∅)}) 𝐀_λ + Σ_{S(u) ≤ t} (exp(λ, −S(u)) ⊗ e_{τ(u)}) Y_u`.
pub fn eval_w_increments(
    tree: &PopulationTree,
    laurent: &LaurentData,
    t: f64,
    tail_tolerance: Option<f64>,
) -> Result<MartingaleValue> {
    check_inputs(tree, laurent, t)?;
    let blocks = Blocks::new(laurent)?;
    let mut acc = blocks.data[tree.ancestor_type()].clone();
    let mut c = [ZERO; MAX_EXP_BLOCK];
    for u in 0..tree.born_by(t) {
        let y = increment_raw(tree, &blocks, u);
        exp_coefficients(blocks.lambda, -tree.individuals()[u].birth_time, &mut c[..blocks.k]);
        accumulate_toeplitz(&c[..blocks.k], &y, blocks.p, &mut acc);
    }
    finish(tree, &blocks, t, acc, Representation::IncrementSum, tail_tolerance)
}

/// `W_0(λ) = (I ⊗ e_i) 𝐀_λ` for ancestor type `i`.
pub fn initial_value(laurent: &LaurentData, ancestor_type: usize) -> CMatrix {
    laurent.type_block(ancestor_type)
}

/// Monte Carlo estimate of the moment in condition (A3).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentConditionReport {
    #[serde(with = "complex_object")]
    pub lambda: Complex64,
    pub pole_order: usize,
    pub q: f64,
    pub alpha: f64,
    /// `E‖∫(1 + s^{k−1}) e^{−θs} 𝛏(ds)‖_HS^q` from `n_samples` draws.
    pub estimate: f64,
    pub standard_error: f64,
    /// The same estimate from an independent batch of `2·n_samples`.
    pub doubled_estimate: f64,
    pub doubled_standard_error: f64,
    /// Whether the two batches agree within 3 combined standard errors.
    pub stable: bool,
    pub finite: bool,
    /// `Re λ > α/q`.
    pub hypothesis_holds: bool,
}

/// Ages beyond this window contribute at most this much to each entry.
const MOMENT_TAIL_EPS: f64 = 1e-12;

fn moment_batch(
    model: &OffspringModel,
    theta: f64,
    k: usize,
    q: f64,
    n: usize,
    key: u64,
) -> (f64, f64) {
    let p = model.p();
    let windows: Vec<f64> = (0..p * p)
        .map(|idx| model.spec(idx / p, idx % p).negligible_horizon(theta, k, MOMENT_TAIL_EPS))
        .collect();
    let mut buf = Vec::new();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for s in 0..n {
        let mut stream = rng::StreamRng::seed_from_u64(rng::mix(key, s as u64));
        let mut norm_sq = 0.0;
        for idx in 0..p * p {
            let spec: &PointProcessSpec = model.spec(idx / p, idx % p);
            buf.clear();
            spec.sample_into(windows[idx], &mut stream, &mut buf);
            let entry: f64 = buf.iter().map(|&x| (1.0 + x.powi(k as i32 - 1)) * (-theta * x).exp()).sum();
            norm_sq += entry * entry;
        }
        let v = norm_sq.sqrt().powf(q);
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
    (mean, (var / nf).sqrt())
}

/// Estimates `E‖∫(1 + s^{k−1}) e^{−θs} 𝛏(ds)‖^q` at the root `(λ, k)` and
/// checks it for stability under doubling the sample size.
pub fn check_moment_condition(
    model: &OffspringModel,
    lambda: Complex64,
    pole_order: usize,
    q: f64,
    n_samples: usize,
    seed: u64,
) -> Result<MomentConditionReport> {
    if lambda.re <= 0.0 {
        return Err(Error::Precondition(format!("Re λ = {} must be positive", lambda.re)));
    }
    if !(q > 1.0 && q <= 2.0) {
        return Err(Error::Precondition(format!("q = {q} must lie in (1, 2]")));
    }
    if n_samples < 2 {
        return Err(Error::Precondition("need at least 2 samples".into()));
    }
    let alpha = spectral::find_malthusian(model)?.alpha;
    let k = pole_order.max(1);
    let base = rng::mix(seed, salt::MOMENT);
    let (estimate, se) = moment_batch(model, lambda.re, k, q, n_samples, rng::mix(base, 1));
    let (doubled, se2) = moment_batch(model, lambda.re, k, q, 2 * n_samples, rng::mix(base, 2));
    let combined = (se * se + se2 * se2).sqrt();
    let stable = (estimate - doubled).abs() <= 3.0 * combined;
    Ok(MomentConditionReport {
        lambda,
        pole_order: k,
        q,
        alpha,
        estimate,
        standard_error: se,
        doubled_estimate: doubled,
        doubled_standard_error: se2,
        stable,
        finite: estimate.is_finite() && doubled.is_finite(),
        hypothesis_holds: lambda.re > alpha / q,
    })
}
