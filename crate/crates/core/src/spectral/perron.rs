use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, CMatrix};
use crate::models::{OffspringModel, DOMAIN_MARGIN};

/// Malthusian parameter and the Perron vectors of `𝓛μ(α)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerronData {
    pub alpha: f64,
    /// Right eigenvector `v` of `𝓛μ(α)` for eigenvalue 1, nonnegative.
    pub right_vec: Vec<f64>,
    /// Left eigenvector `w`, nonnegative.
    pub left_vec: Vec<f64>,
    /// Whether `w·v = 1` could be enforced; false when `w·v` vanishes.
    pub normalized: bool,
    /// Whether `𝓛μ(α)` is primitive.
    pub primitive: bool,
    /// Whether the post-bisection scan found `ρ < 1` on all of `(α, α+10]`.
    pub maximal: bool,
}

impl PerronData {
    /// `π_v = v·w`.
    pub fn projection(&self) -> CMatrix {
        let p = self.right_vec.len();
        let mut m = CMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] = Complex64::new(self.right_vec[i] * self.left_vec[j], 0.0);
            }
        }
        m
    }
}

const BISECTION_TOL: f64 = 1e-12;
const SCAN_STEP: f64 = 0.01;
const SCAN_LENGTH: f64 = 10.0;
/// Bisection results at or below this are treated as α = 0.
const ALPHA_FLOOR: f64 = 1e-9;

/// `ρ(𝓛μ(θ))` for real `θ` in the domain.
pub fn perron_root_at(model: &OffspringModel, theta: f64) -> Result<f64> {
    Ok(kernels::spectral_radius(&model.laplace_real(theta)?)?.rho)
}

/// The maximal `α > 0` with `ρ(𝓛μ(α)) = 1`, with its Perron vectors.
pub fn find_malthusian(model: &OffspringModel) -> Result<PerronData> {
    let rho0 = kernels::spectral_radius(&model.atom_at_zero())?.rho;
    if rho0 >= 1.0 {
        return Err(Error::Precondition(format!(
            "(A1) fails: spectral radius of the atom at zero is {rho0}"
        )));
    }
    let rho = |theta: f64| perron_root_at(model, theta);
    let floor = model.abscissa().max(0.0);

    // Lower end: a point with ρ ≥ 1, approaching the domain edge.
    let mut lo = None;
    for j in 0..=40 {
        let theta = floor + 2f64.powi(-j) + if floor == model.abscissa() { DOMAIN_MARGIN } else { 0.0 };
        if rho(theta)? >= 1.0 {
            lo = Some(theta);
            break;
        }
    }
    let Some(mut lo) = lo else {
        return Err(Error::NoMalthusian(format!(
            "ρ(𝓛μ(θ)) < 1 for every θ > {floor}; the model is subcritical"
        )));
    };

    // Upper end: ρ is non-increasing and tends to ρ(μ({0})) < 1.
    let mut hi = (2.0 * lo).max(1.0);
    let mut doublings = 0;
    while rho(hi)? >= 1.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 1100 || !hi.is_finite() {
            return Err(Error::DomainExhausted("ρ(𝓛μ(θ)) ≥ 1 for all tested θ".into()));
        }
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rho(mid)? >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    if alpha <= ALPHA_FLOOR {
        return Err(Error::NoMalthusian(
            "ρ(𝓛μ(θ)) reaches 1 only at θ = 0; the model is critical".into(),
        ));
    }

    let mut maximal = true;
    let steps = (SCAN_LENGTH / SCAN_STEP).round() as usize;
    for s in 1..=steps {
        let theta = alpha + s as f64 * SCAN_STEP;
        if rho(theta)? >= 1.0 {
            log::warn!("ρ(𝓛μ({theta})) ≥ 1 beyond the bisected α = {alpha}");
            maximal = false;
            break;
        }
    }

    let m = model.laplace_real(alpha)?;
    let primitive = kernels::is_primitive(&m)?;
    let (right, left) = perron_vectors(&m, primitive)?;
    let dot: f64 = right.iter().zip(&left).map(|(a, b)| a * b).sum();
    let normalized = dot > 1e-10;
    let left = if normalized { left.iter().map(|x| x / dot).collect() } else { left };
    Ok(PerronData { alpha, right_vec: right, left_vec: left, normalized, primitive, maximal })
}

fn perron_vectors(m: &CMatrix, primitive: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if primitive {
        let right = kernels::spectral_radius(m)?.eigenvector;
        let left = kernels::spectral_radius(&m.transpose())?.eigenvector;
        if let (Some(r), Some(l)) = (right, left) {
            return Ok((r, l));
        }
    }
    let p = m.rows();
    let re = m.re();
    let i_minus = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.0 } - re[i * p + j]);
    Ok((null_vector(&i_minus), null_vector(&i_minus.transpose())))
}

/// Right singular vector for the smallest singular value, oriented and
/// scaled to unit ℓ1 norm with tiny entries flushed to zero.
fn null_vector(a: &DMatrix<f64>) -> Vec<f64> {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut v: Vec<f64> = vt.row(idx).iter().copied().collect();
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    v.iter_mut().for_each(|x| {
        *x /= norm;
        if x.abs() < 1e-12 {
            *x = 0.0;
        }
    });
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin::*;

    #[test]
    fn example1_alpha_and_vectors() {
        let pd = find_malthusian(&example1()).unwrap();
        assert!((pd.alpha - 1.0).abs() < 1e-10);
        assert!(!pd.primitive && pd.normalized && pd.maximal);
        assert!((pd.right_vec[0] - 1.0).abs() < 1e-10 && pd.right_vec[1] == 0.0);
        assert!((pd.left_vec[0] - 1.0).abs() < 1e-8);
        assert!((pd.left_vec[1] - 4.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn poisson_alpha_equals_rate() {
        for r in [0.3, 1.0, 2.5, 7.0] {
            let pd = find_malthusian(&single_type_poisson(r)).unwrap();
            assert!((pd.alpha - r).abs() < 1e-10, "rate {r}: α = {}", pd.alpha);
            assert!(pd.primitive);
            assert!((pd.right_vec[0] * pd.left_vec[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn example2_alpha_and_unnormalizable_vectors() {
        for a in [1.0, 2.0] {
            let pd = find_malthusian(&example2(a)).unwrap();
            assert!((pd.alpha - a).abs() < 1e-10);
            assert!(!pd.normalized);
        }
    }

    #[test]
    fn primitive_model_vectors() {
        let pd = find_malthusian(&fully_connected_poisson(1.0)).unwrap();
        assert!((pd.alpha - 2.0).abs() < 1e-10);
        assert!(pd.primitive && pd.normalized);
        let m = fully_connected_poisson(1.0).laplace_real(pd.alpha).unwrap();
        let v: Vec<Complex64> = pd.right_vec.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        for i in 0..2 {
            let mv: Complex64 = (0..2).map(|j| m[(i, j)] * v[j]).sum();
            assert!((mv - v[i]).norm() < 1e-8);
            assert!(pd.right_vec[i] > 0.0);
        }
    }

    #[test]
    fn critical_and_subcritical_models_have_no_alpha() {
        assert!(matches!(find_malthusian(&deterministic_chain()), Err(Error::NoMalthusian(_))));
        let sub = OffspringModel::new(
            1,
            vec![crate::models::PointProcessSpec::BernoulliExp { prob: 0.9, rate: 3.0 }],
            crate::models::Ancestor::Fixed(0),
        )
        .unwrap();
        assert!(matches!(find_malthusian(&sub), Err(Error::NoMalthusian(_))));
    }

    #[test]
    fn supercritical_atoms_only() {
        // two children at age 1: ρ(θ) = 2e^{-θ}, α = ln 2
        let m = OffspringModel::new(
            1,
            vec![crate::models::PointProcessSpec::FixedAtom { time: 1.0, count: 2 }],
            crate::models::Ancestor::Fixed(0),
        )
        .unwrap();
        let pd = find_malthusian(&m).unwrap();
        assert!((pd.alpha - 2f64.ln()).abs() < 1e-10);
    }
}
