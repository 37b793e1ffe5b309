//! Parametric offspring point processes and the multi-type offspring model.
//!
//! Each entry `(i, j)` of an [`OffspringModel`] is a point process on
//! `[0, ∞)` giving the ages at which a type-`i` parent bears type-`j`
//! children. The catalog is closed so that the intensity measures have
//! exact Laplace transforms and derivatives anywhere in the complex plane.
//! Entries are independent within one individual.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, CMatrix};
use crate::rng;

/// Points of a `poisson` component are generated until they pass the
/// horizon, so the horizon must be finite whenever one is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointProcessSpec {
    /// No points.
    Empty,
    /// Homogeneous Poisson process on `[0, ∞)`.
    Poisson { rate: f64 },
    /// A single point at an `Exp(rate)` age, present with probability `prob`.
    BernoulliExp { prob: f64, rate: f64 },
    /// `count` points at the deterministic age `time`.
    FixedAtom { time: f64, count: u32 },
    /// Independent superposition of the components.
    Superposition { components: Vec<PointProcessSpec> },
}

const MAX_NESTING: usize = 4;
/// Margin kept from the abscissa of convergence when evaluating transforms.
pub const DOMAIN_MARGIN: f64 = 1e-12;

impl PointProcessSpec {
    pub fn validate(&self) -> Result<()> {
        self.validate_at(1)
    }

    fn validate_at(&self, depth: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        match *self {
            PointProcessSpec::Empty => Ok(()),
            PointProcessSpec::Poisson { rate } => {
                if rate.is_finite() && rate > 0.0 {
                    Ok(())
                } else {
                    bad(format!("poisson rate must be positive, got {rate}"))
                }
            }
            PointProcessSpec::BernoulliExp { prob, rate } => {
                if !(0.0..=1.0).contains(&prob) {
                    bad(format!("bernoulli_exp prob must lie in [0, 1], got {prob}"))
                } else if !(rate.is_finite() && rate > 0.0) {
                    bad(format!("bernoulli_exp rate must be positive, got {rate}"))
                } else {
                    Ok(())
                }
            }
            PointProcessSpec::FixedAtom { time, count } => {
                if !(time.is_finite() && time >= 0.0) {
                    bad(format!("fixed_atom time must be finite and nonnegative, got {time}"))
                } else if count == 0 {
                    bad("fixed_atom count must be positive".into())
                } else {
                    Ok(())
                }
            }
            PointProcessSpec::Superposition { ref components } => {
                if components.is_empty() {
                    return bad("superposition needs at least one component".into());
                }
                if depth > MAX_NESTING {
                    return bad(format!("superposition nested deeper than {MAX_NESTING}"));
                }
                components.iter().try_for_each(|c| c.validate_at(depth + 1))
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            PointProcessSpec::Empty => true,
            PointProcessSpec::BernoulliExp { prob, .. } => *prob == 0.0,
            PointProcessSpec::Superposition { components } => components.iter().all(Self::is_empty),
            _ => false,
        }
    }

    /// Abscissa of convergence of the Laplace transform of the intensity
    /// measure: the transform is finite exactly for `Re z` strictly above
    /// it (`-∞` for entire transforms).
    pub fn abscissa(&self) -> f64 {
        match self {
            PointProcessSpec::Empty | PointProcessSpec::FixedAtom { .. } => f64::NEG_INFINITY,
            PointProcessSpec::Poisson { .. } => 0.0,
            PointProcessSpec::BernoulliExp { prob, rate } => {
                if *prob == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -rate
                }
            }
            PointProcessSpec::Superposition { components } => components
                .iter()
                .map(Self::abscissa)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// `m`-th derivative of the Laplace transform of the intensity measure
    /// at `z`; the caller guarantees `z` lies in the domain.
    pub fn laplace_derivative(&self, z: Complex64, m: usize) -> Complex64 {
        let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
        let fact: f64 = (1..=m).map(|i| i as f64).product();
        match *self {
            PointProcessSpec::Empty => Complex64::new(0.0, 0.0),
            PointProcessSpec::Poisson { rate } => rate * sign * fact / z.powi(m as i32 + 1),
            PointProcessSpec::BernoulliExp { prob, rate } => {
                prob * rate * sign * fact / (z + rate).powi(m as i32 + 1)
            }
            PointProcessSpec::FixedAtom { time, count } => {
                count as f64 * (-time).powi(m as i32) * (-z * time).exp()
            }
            PointProcessSpec::Superposition { ref components } => {
                components.iter().map(|c| c.laplace_derivative(z, m)).sum()
            }
        }
    }

    /// Mass of the intensity measure at age 0.
    pub fn atom_at_zero(&self) -> f64 {
        match *self {
            PointProcessSpec::FixedAtom { time, count } if time == 0.0 => count as f64,
            PointProcessSpec::Superposition { ref components } => {
                components.iter().map(Self::atom_at_zero).sum()
            }
            _ => 0.0,
        }
    }

    /// `∫_{[h,∞)} (1 + s^{k-1}) e^{-θ s} μ(ds)` in closed form.
    pub fn weighted_tail(&self, theta: f64, k: usize, h: f64) -> f64 {
        let h = h.max(0.0);
        match *self {
            PointProcessSpec::Empty => 0.0,
            PointProcessSpec::Poisson { rate } => rate * exp_poly_tail(theta, k, h),
            PointProcessSpec::BernoulliExp { prob, rate } => {
                prob * rate * exp_poly_tail(theta + rate, k, h)
            }
            PointProcessSpec::FixedAtom { time, count } => {
                if time >= h {
                    count as f64 * (1.0 + time.powi(k as i32 - 1)) * (-theta * time).exp()
                } else {
                    0.0
                }
            }
            PointProcessSpec::Superposition { ref components } => {
                components.iter().map(|c| c.weighted_tail(theta, k, h)).sum()
            }
        }
    }

    /// Appends an exact sample of the process restricted to `[0, horizon]`,
    /// sorted by age. Superposition components draw from their own derived
    /// streams, so a sample on a longer horizon extends a shorter one.
    pub fn sample_into<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R, out: &mut Vec<f64>) {
        let start = out.len();
        self.sample_unsorted(horizon, rng, out);
        if matches!(self, PointProcessSpec::Superposition { .. }) {
            out[start..].sort_by(f64::total_cmp);
        }
    }

    fn sample_unsorted<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R, out: &mut Vec<f64>) {
        match *self {
            PointProcessSpec::Empty => {}
            PointProcessSpec::Poisson { rate } => {
                assert!(horizon.is_finite(), "poisson sampling needs a finite horizon");
                let mut t = 0.0;
                loop {
                    let gap: f64 = rng.sample(Exp1);
                    t += gap / rate;
                    if t > horizon {
                        break;
                    }
                    out.push(t);
                }
            }
            PointProcessSpec::BernoulliExp { prob, rate } => {
                let u: f64 = rng.random();
                let e: f64 = rng.sample(Exp1);
                let age = e / rate;
                if u < prob && age <= horizon {
                    out.push(age);
                }
            }
            PointProcessSpec::FixedAtom { time, count } => {
                if time <= horizon {
                    out.extend(std::iter::repeat_n(time, count as usize));
                }
            }
            PointProcessSpec::Superposition { ref components } => {
                let keys: Vec<u64> = components.iter().map(|_| rng.next_u64()).collect();
                for (c, key) in components.iter().zip(keys) {
                    c.sample_unsorted(horizon, &mut rng::stream(key), out);
                }
            }
        }
    }

    /// An age beyond which `∫ (1+s^{k-1}) e^{-θs} μ(ds)` leaves less than
    /// `eps`, found by doubling.
    pub fn negligible_horizon(&self, theta: f64, k: usize, eps: f64) -> f64 {
        let mut h = 1.0;
        while self.weighted_tail(theta, k, h) > eps && h < 1e6 {
            h *= 2.0;
        }
        h
    }
}

/// `∫_h^∞ (1 + s^{k-1}) e^{-a s} ds` for `a > 0`, via the upper incomplete
/// gamma function at integer order.
fn exp_poly_tail(a: f64, k: usize, h: f64) -> f64 {
    let e = (-a * h).exp();
    // Γ(k, ah)/a^k = (k-1)! e^{-ah} Σ_{j<k} (ah)^j/j! / a^k
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..k {
        term *= a * h / j as f64;
        sum += term;
    }
    let fact: f64 = (1..k).map(|i| i as f64).product();
    e / a + fact * e * sum / a.powi(k as i32)
}

/// Sample of a point process on `[0, horizon]`, sorted.
pub fn sample_offspring<R: Rng + ?Sized>(
    spec: &PointProcessSpec,
    horizon: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::new();
    spec.sample_into(horizon, rng, &mut out);
    out
}

/// Type of the ancestor `∅`.
#[derive(Clone, Debug, PartialEq)]
pub enum Ancestor {
    /// Zero-based fixed type.
    Fixed(usize),
    /// Probability vector over types.
    Distribution(Vec<f64>),
}

/// The `p×p` offspring process matrix plus the ancestor's type law.
#[derive(Clone, Debug, PartialEq)]
pub struct OffspringModel {
    p: usize,
    specs: Vec<PointProcessSpec>,
    ancestor: Ancestor,
}

/// Laplace transform of the intensity matrix and its derivatives at a point.
#[derive(Clone, Debug)]
pub struct LaplaceEval {
    pub z: Complex64,
    pub value: CMatrix,
    /// `derivatives[m]` is the `m`-th derivative; `derivatives[0] == value`.
    pub derivatives: Vec<CMatrix>,
}

impl OffspringModel {
    /// `specs` is row-major: entry `i*p + j` governs type-`j` children of
    /// type-`i` parents (zero-based).
    pub fn new(p: usize, specs: Vec<PointProcessSpec>, ancestor: Ancestor) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidModel("p must be at least 1".into()));
        }
        if specs.len() != p * p {
            return Err(Error::InvalidModel(format!(
                "expected {} entries, got {}",
                p * p,
                specs.len()
            )));
        }
        for (idx, s) in specs.iter().enumerate() {
            s.validate().map_err(|e| {
                Error::InvalidModel(format!("entry ({}, {}): {e}", idx / p + 1, idx % p + 1))
            })?;
        }
        match &ancestor {
            Ancestor::Fixed(i) if *i >= p => {
                return Err(Error::InvalidModel(format!("ancestor type {} out of range", i + 1)))
            }
            Ancestor::Distribution(pi) => {
                if pi.len() != p || pi.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(Error::InvalidModel(
                        "ancestor distribution must be p nonnegative weights".into(),
                    ));
                }
                let total: f64 = pi.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidModel(format!(
                        "ancestor distribution sums to {total}, not 1"
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { p, specs, ancestor })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn spec(&self, i: usize, j: usize) -> &PointProcessSpec {
        &self.specs[i * self.p + j]
    }

    pub fn ancestor(&self) -> &Ancestor {
        &self.ancestor
    }

    /// Same offspring law with a fixed zero-based ancestor type.
    pub fn with_ancestor(&self, ancestor: Ancestor) -> Result<Self> {
        Self::new(self.p, self.specs.clone(), ancestor)
    }

    /// Largest abscissa over all entries; `Dom(𝓛μ)` is the open half-plane
    /// to its right.
    pub fn abscissa(&self) -> f64 {
        self.specs.iter().map(PointProcessSpec::abscissa).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn in_domain(&self, z: Complex64) -> bool {
        z.re > self.abscissa() + DOMAIN_MARGIN
    }

    fn check_domain(&self, z: Complex64) -> Result<()> {
        for (idx, s) in self.specs.iter().enumerate() {
            let a = s.abscissa();
            if !(z.re > a + DOMAIN_MARGIN) {
                return Err(Error::DomainViolation {
                    row: idx / self.p + 1,
                    col: idx % self.p + 1,
                    z,
                    abscissa: a,
                });
            }
        }
        Ok(())
    }

    /// Derivative of order `m` of `𝓛μ` at `z`.
    pub fn laplace_derivative(&self, z: Complex64, m: usize) -> Result<CMatrix> {
        self.check_domain(z)?;
        let data = self.specs.iter().map(|s| s.laplace_derivative(z, m)).collect();
        Ok(CMatrix::from_vec_unchecked(self.p, self.p, data))
    }

    /// `𝓛μ(z)` and its derivatives up to order `m_max`.
    pub fn laplace_matrix(&self, z: Complex64, m_max: usize) -> Result<LaplaceEval> {
        self.check_domain(z)?;
        let derivatives: Vec<CMatrix> = (0..=m_max)
            .map(|m| {
                CMatrix::from_vec_unchecked(
                    self.p,
                    self.p,
                    self.specs.iter().map(|s| s.laplace_derivative(z, m)).collect(),
                )
            })
            .collect();
        Ok(LaplaceEval { z, value: derivatives[0].clone(), derivatives })
    }

    /// `𝓛μ(θ)` at a real point as a plain nonnegative matrix.
    pub fn laplace_real(&self, theta: f64) -> Result<CMatrix> {
        let m = self.laplace_derivative(Complex64::new(theta, 0.0), 0)?;
        let data = m.data().iter().map(|z| Complex64::new(z.re.max(0.0), 0.0)).collect();
        Ok(CMatrix::from_vec_unchecked(self.p, self.p, data))
    }

    /// The matrix `μ^{i,j}({0})` of instantaneous offspring means.
    pub fn atom_at_zero(&self) -> CMatrix {
        let data = self
            .specs
            .iter()
            .map(|s| Complex64::new(s.atom_at_zero(), 0.0))
            .collect();
        CMatrix::from_vec_unchecked(self.p, self.p, data)
    }

    /// `Σ_{i,j} ∫_{[h,∞)} (1 + s^{k-1}) e^{-θs} μ^{i,j}(ds)`.
    pub fn weighted_tail(&self, theta: f64, k: usize, h: f64) -> f64 {
        self.specs.iter().map(|s| s.weighted_tail(theta, k, h)).sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_model()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self)).expect("model serializes")
    }
}

/// On-disk model schema:
/// `{"p": int, "entries": [{"from": i, "to": j, "process": {...}}], "ancestor": int | [prob, ...]}`
/// with one-based types. Unlisted entries are empty.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub p: usize,
    #[serde(default)]
    pub entries: Vec<EntryFile>,
    #[serde(default = "default_ancestor")]
    pub ancestor: AncestorFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryFile {
    pub from: usize,
    pub to: usize,
    pub process: PointProcessSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
pub enum AncestorFile {
    Type(usize),
    Distribution(Vec<f64>),
}

fn default_ancestor() -> AncestorFile {
    AncestorFile::Type(1)
}

impl ModelFile {
    pub fn into_model(self) -> Result<OffspringModel> {
        let p = self.p;
        if p == 0 {
            return Err(Error::InvalidModel("p must be at least 1".into()));
        }
        let mut specs = vec![PointProcessSpec::Empty; p * p];
        let mut seen = vec![false; p * p];
        for e in self.entries {
            if e.from == 0 || e.from > p || e.to == 0 || e.to > p {
                return Err(Error::InvalidModel(format!(
                    "entry ({}, {}) outside 1..={p}",
                    e.from, e.to
                )));
            }
            let idx = (e.from - 1) * p + (e.to - 1);
            if seen[idx] {
                return Err(Error::InvalidModel(format!(
                    "duplicate entry ({}, {})",
                    e.from, e.to
                )));
            }
            seen[idx] = true;
            specs[idx] = e.process;
        }
        let ancestor = match self.ancestor {
            AncestorFile::Type(t) if t >= 1 => Ancestor::Fixed(t - 1),
            AncestorFile::Type(t) => {
                return Err(Error::InvalidModel(format!("ancestor type {t} out of range")))
            }
            AncestorFile::Distribution(pi) => Ancestor::Distribution(pi),
        };
        OffspringModel::new(p, specs, ancestor)
    }

    pub fn from_model(model: &OffspringModel) -> Self {
        let p = model.p;
        let entries = (0..p * p)
            .filter(|&idx| model.specs[idx] != PointProcessSpec::Empty)
            .map(|idx| EntryFile {
                from: idx / p + 1,
                to: idx % p + 1,
                process: model.specs[idx].clone(),
            })
            .collect();
        let ancestor = match &model.ancestor {
            Ancestor::Fixed(i) => AncestorFile::Type(i + 1),
            Ancestor::Distribution(pi) => AncestorFile::Distribution(pi.clone()),
        };
        Self { p, entries, ancestor }
    }
}

/// Outcome of the (A1)/(A2) checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub a1_passed: bool,
    /// `ρ(μ(0))`.
    pub a1_spectral_radius: f64,
    pub a2_passed: bool,
    pub alpha: Option<f64>,
    pub a2_detail: Option<String>,
}

/// Checks (A1) `ρ(μ({0})) < 1` and (A2) existence of a Malthusian parameter.
pub fn validate_assumptions(model: &OffspringModel) -> ValidationReport {
    let rho0 = kernels::spectral_radius(&model.atom_at_zero())
        .map(|r| r.rho)
        .unwrap_or(f64::INFINITY);
    let a1 = rho0 < 1.0;
    let (a2, alpha, detail) = if !a1 {
        (false, None, Some("skipped: (A1) fails".to_string()))
    } else {
        match crate::spectral::find_malthusian(model) {
            Ok(perron) => (true, Some(perron.alpha), None),
            Err(e) => (false, None, Some(e.to_string())),
        }
    };
    ValidationReport {
        a1_passed: a1,
        a1_spectral_radius: rho0,
        a2_passed: a2,
        alpha,
        a2_detail: detail,
    }
}

/// Models used throughout the tests, the CLI and the benches.
pub mod builtin {
    use super::*;

    /// Two types: type 1 bears both types at Poisson rate 1; type 2 bears
    /// one type-2 child at an `Exp(1)` age with probability 1/2.
    pub fn example1() -> OffspringModel {
        use PointProcessSpec::*;
        OffspringModel::new(
            2,
            vec![
                Poisson { rate: 1.0 },
                Poisson { rate: 1.0 },
                Empty,
                BernoulliExp { prob: 0.5, rate: 1.0 },
            ],
            Ancestor::Fixed(0),
        )
        .expect("valid built-in model")
    }

    /// Two types with Poisson(`rate`) same-type offspring; each type-1
    /// individual also bears one type-2 child at age 0.
    pub fn example2(rate: f64) -> OffspringModel {
        use PointProcessSpec::*;
        OffspringModel::new(
            2,
            vec![
                Poisson { rate },
                FixedAtom { time: 0.0, count: 1 },
                Empty,
                Poisson { rate },
            ],
            Ancestor::Fixed(0),
        )
        .expect("valid built-in model")
    }

    /// Single type, Poisson(`rate`) offspring: the Yule-type Nerman case.
    pub fn single_type_poisson(rate: f64) -> OffspringModel {
        OffspringModel::new(1, vec![PointProcessSpec::Poisson { rate }], Ancestor::Fixed(0))
            .expect("valid built-in model")
    }

    /// Single type, exactly one child at age 1.
    pub fn deterministic_chain() -> OffspringModel {
        OffspringModel::new(
            1,
            vec![PointProcessSpec::FixedAtom { time: 1.0, count: 1 }],
            Ancestor::Fixed(0),
        )
        .expect("valid built-in model")
    }

    /// Two types, every entry Poisson(`rate`).
    pub fn fully_connected_poisson(rate: f64) -> OffspringModel {
        OffspringModel::new(
            2,
            vec![PointProcessSpec::Poisson { rate }; 4],
            Ancestor::Fixed(0),
        )
        .expect("valid built-in model")
    }

    fn random_spec<R: Rng + ?Sized>(rng: &mut R, depth: usize) -> PointProcessSpec {
        use PointProcessSpec::*;
        let u: f64 = rng.random();
        match u {
            u if u < 0.3 => Empty,
            u if u < 0.6 => Poisson { rate: rng.random_range(0.2..1.5) },
            u if u < 0.8 => BernoulliExp { prob: rng.random_range(0.2..1.0), rate: rng.random_range(0.5..3.0) },
            u if u < 0.9 || depth > 0 => {
                FixedAtom { time: rng.random_range(0.2..2.0), count: rng.random_range(1..=3) }
            }
            _ => Superposition { components: vec![random_spec(rng, depth + 1), random_spec(rng, depth + 1)] },
        }
    }

    /// Random catalog model with `1..=max_types` types that passes (A1) and
    /// (A2), drawn deterministically from `seed`.
    pub fn random_model(seed: u64, max_types: usize) -> OffspringModel {
        let mut rng = rng::stream(seed);
        loop {
            let p = rng.random_range(1..=max_types.max(1));
            let specs = (0..p * p).map(|_| random_spec(&mut rng, 0)).collect();
            let Ok(model) = OffspringModel::new(p, specs, Ancestor::Fixed(0)) else { continue };
            let report = validate_assumptions(&model);
            if report.a1_passed && report.a2_passed {
                return model;
            }
        }
    }

    /// Registry lookup by name: `1`/`ex1`, `2`/`ex2`, `nerman`, `chain`,
    /// `primitive`. `rate` parameterises the Poisson-driven examples.
    pub fn lookup(name: &str, rate: f64) -> Option<OffspringModel> {
        match name {
            "1" | "ex1" | "example1" => Some(example1()),
            "2" | "ex2" | "example2" => Some(example2(rate)),
            "3" | "nerman" | "single" => Some(single_type_poisson(rate)),
            "chain" => Some(deterministic_chain()),
            "primitive" => Some(fully_connected_poisson(rate)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::builtin::*;
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn example1_laplace_at_two() {
        let l = example1().laplace_matrix(c(2.0), 0).unwrap().value;
        let expected =
            CMatrix::from_real_rows(&[&[0.5, 0.5], &[0.0, 1.0 / 6.0]]).unwrap();
        assert!(l.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn example2_laplace_at_alpha() {
        for alpha in [1.0, 2.0, 0.7] {
            let l = example2(alpha).laplace_matrix(c(alpha), 0).unwrap().value;
            let expected = CMatrix::from_real_rows(&[&[1.0, 1.0], &[0.0, 1.0]]).unwrap();
            assert!(l.max_abs_diff(&expected) < 1e-15);
        }
    }

    #[test]
    fn atom_at_zero_has_vanishing_derivatives() {
        let s = PointProcessSpec::FixedAtom { time: 0.0, count: 1 };
        for z in [c(0.3), Complex64::new(-2.0, 5.0)] {
            assert_eq!(s.laplace_derivative(z, 0), c(1.0));
            for m in 1..4 {
                assert_eq!(s.laplace_derivative(z, m), c(0.0));
            }
        }
    }

    #[test]
    fn atom_at_zero_matrices() {
        assert_eq!(example1().atom_at_zero(), CMatrix::zeros(2, 2));
        assert_eq!(
            example2(1.0).atom_at_zero(),
            CMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap()
        );
        let m = OffspringModel::new(
            1,
            vec![PointProcessSpec::FixedAtom { time: 0.0, count: 2 }],
            Ancestor::Fixed(0),
        )
        .unwrap();
        assert_eq!(m.atom_at_zero(), CMatrix::from_real_rows(&[&[2.0]]).unwrap());
    }

    #[test]
    fn domain_violation_names_the_entry() {
        let err = example1().laplace_matrix(c(-0.5), 0).unwrap_err();
        match err {
            Error::DomainViolation { row, col, .. } => assert_eq!((row, col), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
        // bernoulli_exp(·, 1) is fine at -0.5 but poisson is not
        assert!(example1().laplace_matrix(c(1e-13), 0).is_err());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        use PointProcessSpec::*;
        assert!(Poisson { rate: 0.0 }.validate().is_err());
        assert!(BernoulliExp { prob: 1.5, rate: 1.0 }.validate().is_err());
        assert!(FixedAtom { time: -1.0, count: 1 }.validate().is_err());
        assert!(FixedAtom { time: 1.0, count: 0 }.validate().is_err());
        assert!(Superposition { components: vec![] }.validate().is_err());
        let mut deep = Poisson { rate: 1.0 };
        for _ in 0..5 {
            deep = Superposition { components: vec![deep] };
        }
        assert!(deep.validate().is_err());
        let ok = Superposition {
            components: vec![Superposition { components: vec![Poisson { rate: 1.0 }] }],
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn ancestor_distribution_must_sum_to_one() {
        let specs = vec![PointProcessSpec::Poisson { rate: 1.0 }; 4];
        assert!(OffspringModel::new(2, specs.clone(), Ancestor::Distribution(vec![0.5, 0.4])).is_err());
        assert!(OffspringModel::new(2, specs, Ancestor::Distribution(vec![0.5, 0.5])).is_ok());
    }

    #[test]
    fn sampling_fixed_cases() {
        let mut r = rng::stream(7);
        let s = PointProcessSpec::FixedAtom { time: 1.0, count: 3 };
        assert_eq!(sample_offspring(&s, 2.0, &mut r), vec![1.0, 1.0, 1.0]);
        assert!(sample_offspring(&s, 0.5, &mut r).is_empty());
        let b = PointProcessSpec::BernoulliExp { prob: 0.0, rate: 2.0 };
        for _ in 0..100 {
            assert!(sample_offspring(&b, 100.0, &mut r).is_empty());
        }
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_stable() {
        let s = PointProcessSpec::Superposition {
            components: vec![
                PointProcessSpec::Poisson { rate: 2.0 },
                PointProcessSpec::BernoulliExp { prob: 0.7, rate: 0.5 },
                PointProcessSpec::FixedAtom { time: 1.5, count: 2 },
            ],
        };
        let short = sample_offspring(&s, 3.0, &mut rng::stream(99));
        let again = sample_offspring(&s, 3.0, &mut rng::stream(99));
        let long = sample_offspring(&s, 10.0, &mut rng::stream(99));
        assert_eq!(short, again);
        assert!(short.windows(2).all(|w| w[0] <= w[1]));
        let prefix: Vec<f64> = long.iter().copied().filter(|&x| x <= 3.0).collect();
        assert_eq!(prefix, short);
    }

    #[test]
    fn poisson_count_mean() {
        // Mean count on [0, T] is r·T; check within 3 standard errors.
        let (rate, t, n) = (1.7, 2.5, 100_000);
        let s = PointProcessSpec::Poisson { rate };
        let mut r = rng::stream(2024);
        let counts: Vec<f64> = (0..n)
            .map(|_| sample_offspring(&s, t, &mut r).len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - rate * t).abs() < 3.0 * se, "mean {mean} vs {}", rate * t);
    }

    #[test]
    fn weighted_tail_closed_forms() {
        let s = PointProcessSpec::Poisson { rate: 1.0 };
        for h in [0.0, 0.5, 3.0] {
            assert!((s.weighted_tail(1.0, 1, h) - 2.0 * (-h).exp()).abs() < 1e-15);
        }
        let a = PointProcessSpec::FixedAtom { time: 2.0, count: 3 };
        assert_eq!(a.weighted_tail(1.0, 2, 2.5), 0.0);
        let full = 3.0 * (1.0 + 2.0) * (-2.0f64).exp();
        assert!((a.weighted_tail(1.0, 2, 0.0) - full).abs() < 1e-15);
        // k = 3, poisson: ∫_h^∞ (1 + s²) e^{-s} ds = e^{-h}(1 + h² + 2h + 2)
        let h: f64 = 1.3;
        let expected = (-h).exp() * (3.0 + 2.0 * h + h * h);
        assert!((s.weighted_tail(1.0, 3, h) - expected).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let text = r#"{"p": 2, "entries": [
            {"from": 1, "to": 1, "process": {"kind": "poisson", "rate": 1.0}},
            {"from": 1, "to": 2, "process": {"kind": "poisson", "rate": 1.0}},
            {"from": 2, "to": 2, "process": {"kind": "bernoulli_exp", "prob": 0.5, "rate": 1.0}}
        ], "ancestor": 1}"#;
        let m = OffspringModel::from_json(text).unwrap();
        assert_eq!(m, example1());
        let back = OffspringModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let dist = OffspringModel::from_json(r#"{"p": 2, "ancestor": [0.25, 0.75]}"#).unwrap();
        assert_eq!(dist.ancestor(), &Ancestor::Distribution(vec![0.25, 0.75]));
        assert!(dist.spec(0, 1).is_empty());
    }

    #[test]
    fn json_errors_carry_position() {
        match OffspringModel::from_json("{\"p\": 2,\n \"entries\": [ }") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            OffspringModel::from_json(r#"{"p": 1, "entries": [{"from": 2, "to": 1, "process": {"kind": "empty"}}]}"#),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn assumptions_on_examples() {
        let r = validate_assumptions(&example1());
        assert!(r.a1_passed && r.a2_passed);
        assert_eq!(r.a1_spectral_radius, 0.0);
        assert!((r.alpha.unwrap() - 1.0).abs() < 1e-10);

        let r = validate_assumptions(&example2(2.0));
        assert!(r.a1_passed && r.a2_passed);
        assert!((r.alpha.unwrap() - 2.0).abs() < 1e-10);

        let sub = OffspringModel::new(
            1,
            vec![PointProcessSpec::BernoulliExp { prob: 0.5, rate: 1.0 }],
            Ancestor::Fixed(0),
        )
        .unwrap();
        let r = validate_assumptions(&sub);
        assert!(r.a1_passed && !r.a2_passed);

        let explosive = OffspringModel::new(
            1,
            vec![PointProcessSpec::FixedAtom { time: 0.0, count: 2 }],
            Ancestor::Fixed(0),
        )
        .unwrap();
        let r = validate_assumptions(&explosive);
        assert!(!r.a1_passed && !r.a2_passed);
        assert_eq!(r.a1_spectral_radius, 2.0);
    }
}
