use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, kronecker, CMatrix};
use crate::models::OffspringModel;

use super::roots::{circle_winding, resolvent, CharacteristicRoot, COEFF_ZERO_TOL};

/// Principal part of the resolvent `(I − 𝓛μ(z))^{-1}` at a root.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaurentData {
    pub root: CharacteristicRoot,
    /// `coeffs[n-1]` multiplies `(z − λ)^{-n}`, for `n = 1..=pole_order`.
    pub coeffs: Vec<CMatrix>,
    /// `Σ_l f_lᵀ ⊗ A_l`: the coefficients stacked vertically, `A_1` on top.
    pub stacked: CMatrix,
    pub identity_residual: f64,
}

impl LaurentData {
    /// Assembles the stacked block and the identity residual from given
    /// coefficients.
    pub fn from_parts(model: &OffspringModel, root: CharacteristicRoot, coeffs: Vec<CMatrix>) -> Result<Self> {
        let p = model.p();
        if coeffs.is_empty() || coeffs.iter().any(|a| a.shape() != (p, p)) {
            return Err(Error::InvalidMatrix(format!(
                "expected at least one {p}x{p} coefficient"
            )));
        }
        let stacked = stack(&coeffs);
        let mut data = Self { root, coeffs, stacked, identity_residual: f64::NAN };
        data.identity_residual = verify_identities(model, &data)?;
        Ok(data)
    }

    pub fn pole_order(&self) -> usize {
        self.coeffs.len()
    }

    /// `B_j = (I_k ⊗ e_j) 𝐀`: row `l` is row `j` of `A_{l+1}`.
    pub fn type_block(&self, j: usize) -> CMatrix {
        let p = self.stacked.cols();
        let k = self.coeffs.len();
        let mut b = CMatrix::zeros(k, p);
        for l in 0..k {
            for c in 0..p {
                b[(l, c)] = self.coeffs[l][(j, c)];
            }
        }
        b
    }
}

/// `Σ_l f_lᵀ ⊗ A_l` for `l = 1..=k`.
pub fn stack(coeffs: &[CMatrix]) -> CMatrix {
    let k = coeffs.len();
    let mut out = CMatrix::zeros(k * coeffs[0].rows(), coeffs[0].cols());
    for (l, a) in coeffs.iter().enumerate() {
        let f = CMatrix::unit_row(k, l).transpose();
        out = &out + &kronecker(&f, a);
    }
    out
}

/// `A_n ≈ (1/M) Σ_m R(z_m) (r e^{iφ_m})^n` for `n = 1..=n_max`.
pub(crate) fn contour_coefficients(
    model: &OffspringModel,
    lambda: Complex64,
    radius: f64,
    n_max: usize,
    nodes: usize,
) -> Result<Vec<CMatrix>> {
    let p = model.p();
    let mut acc = vec![CMatrix::zeros(p, p); n_max];
    for m in 0..nodes {
        let e = Complex64::from_polar(radius, 2.0 * PI * m as f64 / nodes as f64);
        let r = resolvent(model, lambda + e)?;
        let mut pow = e;
        for a in acc.iter_mut() {
            *a = &*a + &r.scale(pow);
            pow *= e;
        }
    }
    let inv = Complex64::new(1.0 / nodes as f64, 0.0);
    Ok(acc.into_iter().map(|a| a.scale(inv)).collect())
}

const NODES_START: usize = 256;
const NODES_MAX: usize = 2048;
const DOUBLING_TOL: f64 = 1e-9;
const MAX_HALVINGS: usize = 8;
const NOISE_FLOOR: f64 = 1e-14;

/// Laurent matrices `A_{λ,1..k}` by trapezoid quadrature on a circle.
pub fn laurent_coeffs(model: &OffspringModel, root: &CharacteristicRoot) -> Result<LaurentData> {
    let k = root.pole_order;
    let lambda = root.lambda;
    let mut radius = root.contour_radius;
    let mut halvings = 0;
    loop {
        let w = circle_winding(model, lambda, 2.0 * radius, NODES_START);
        match w {
            Ok(w) if (w - root.zero_order as f64).norm() < 1e-3 => break,
            _ if halvings < MAX_HALVINGS => {
                radius *= 0.5;
                halvings += 1;
            }
            _ => return Err(Error::NearbySingularity { lambda, radius }),
        }
    }

    let mut nodes = NODES_START;
    let mut coeffs = contour_coefficients(model, lambda, radius, k + 2, nodes)?;
    loop {
        if nodes >= NODES_MAX {
            return Err(Error::QuadratureNonConvergence(format!(
                "Laurent coefficients at {lambda} unstable at {nodes} nodes"
            )));
        }
        nodes *= 2;
        let finer = contour_coefficients(model, lambda, radius, k + 2, nodes)?;
        let scale = finer.iter().map(kernels::hs_norm).fold(1.0, f64::max);
        let change = coeffs
            .iter()
            .zip(&finer)
            .map(|(a, b)| kernels::hs_norm(&(a - b)))
            .fold(0.0, f64::max);
        coeffs = finer;
        if change <= DOUBLING_TOL * scale {
            break;
        }
    }

    let scale = coeffs.iter().map(kernels::hs_norm).fold(1.0, f64::max);
    for n in k..k + 2 {
        let norm = kernels::hs_norm(&coeffs[n]);
        if norm > COEFF_ZERO_TOL * scale {
            return Err(Error::PoleOrder(format!(
                "A_{} has norm {norm:e} at {lambda} but the pole order is {k}",
                n + 1
            )));
        }
    }
    coeffs.truncate(k);
    clean(&mut coeffs, lambda.im == 0.0);
    let mut root = root.clone();
    root.contour_radius = radius;
    LaurentData::from_parts(model, root, coeffs)
}

/// Flushes entries below the quadrature noise floor to zero; at a real
/// root the coefficients are real, so their imaginary parts are dropped.
fn clean(coeffs: &mut [CMatrix], real_root: bool) {
    let scale = coeffs.iter().map(CMatrix::max_abs).fold(1.0, f64::max);
    let floor = NOISE_FLOOR * scale;
    for a in coeffs.iter_mut() {
        for z in a.data_mut() {
            if real_root {
                z.im = 0.0;
            }
            if z.re.abs() <= floor {
                z.re = 0.0;
            }
            if z.im.abs() <= floor {
                z.im = 0.0;
            }
        }
    }
}

/// Residual of the coefficient identities
/// `A_j = Σ_{m=0}^{k−j} 𝓛μ^{(m)}(λ)/m! · A_{m+j}` together with the block
/// fixed point `𝐀 = (Σ_m U_m ⊗ 𝓛μ^{(m)}(λ)/m!) 𝐀` (`U_m` the `m`-th
/// superdiagonal of ones). Returns the larger of the two HS residuals.
pub fn verify_identities(model: &OffspringModel, data: &LaurentData) -> Result<f64> {
    let k = data.coeffs.len();
    let p = model.p();
    let ev = model.laplace_matrix(data.root.lambda, k.saturating_sub(1))?;
    let mut fact = 1.0;
    let taylor: Vec<CMatrix> = ev
        .derivatives
        .iter()
        .enumerate()
        .map(|(m, d)| {
            if m > 0 {
                fact *= m as f64;
            }
            d.scale(Complex64::new(1.0 / fact, 0.0))
        })
        .collect();

    let mut coefficient_residual = 0.0f64;
    for j in 1..=k {
        let mut rhs = CMatrix::zeros(p, p);
        for m in 0..=k - j {
            rhs = &rhs + &taylor[m].matmul(&data.coeffs[m + j - 1]);
        }
        coefficient_residual = coefficient_residual.max(kernels::hs_norm(&(&data.coeffs[j - 1] - &rhs)));
    }

    let mut block = CMatrix::zeros(k * p, k * p);
    for (m, t) in taylor.iter().enumerate() {
        let mut shift = CMatrix::zeros(k, k);
        for a in 0..k - m {
            shift[(a, a + m)] = Complex64::new(1.0, 0.0);
        }
        block = &block + &kronecker(&shift, t);
    }
    let fixed_point = kernels::hs_norm(&(&data.stacked - &block.matmul(&data.stacked)));
    Ok(coefficient_residual.max(fixed_point))
}

#[cfg(test)]
mod tests {
    use super::super::roots::{find_roots, Region};
    use super::*;
    use crate::models::builtin::*;

    fn root_near(model: &OffspringModel, target: f64) -> CharacteristicRoot {
        let region = Region::around_alpha(model, target);
        find_roots(model, &region)
            .unwrap()
            .into_iter()
            .min_by(|a, b| (a.lambda - target).norm().total_cmp(&(b.lambda - target).norm()))
            .unwrap()
    }

    #[test]
    fn example1_residue_matrix() {
        let m = example1();
        let data = laurent_coeffs(&m, &root_near(&m, 1.0)).unwrap();
        let expected = CMatrix::from_real_rows(&[&[1.0, 4.0 / 3.0], &[0.0, 0.0]]).unwrap();
        assert_eq!(data.coeffs.len(), 1);
        assert!(data.coeffs[0].max_abs_diff(&expected) < 1e-10);
        assert!(data.identity_residual <= 1e-10);
        assert_eq!(data.stacked, data.coeffs[0]);
    }

    #[test]
    fn example2_laurent_matrices() {
        for a in [1.0, 2.0] {
            let m = example2(a);
            let data = laurent_coeffs(&m, &root_near(&m, a)).unwrap();
            let a1 = CMatrix::from_real_rows(&[&[a, 2.0 * a], &[0.0, a]]).unwrap();
            let a2 = CMatrix::from_real_rows(&[&[0.0, a * a], &[0.0, 0.0]]).unwrap();
            assert_eq!(data.coeffs.len(), 2);
            assert!(data.coeffs[0].max_abs_diff(&a1) < 1e-8, "{:?}", data.coeffs[0]);
            assert!(data.coeffs[1].max_abs_diff(&a2) < 1e-8, "{:?}", data.coeffs[1]);
            assert!(data.identity_residual <= 1e-10, "{}", data.identity_residual);
            assert_eq!(data.stacked.shape(), (4, 2));
            assert_eq!(data.stacked.row_block(2, 2), data.coeffs[1]);
            let b1 = data.type_block(0);
            assert_eq!(b1.row(0), data.coeffs[0].row(0));
            assert_eq!(b1.row(1), data.coeffs[1].row(0));
        }
    }

    #[test]
    fn scalar_residue() {
        let m = single_type_poisson(1.0);
        let data = laurent_coeffs(&m, &root_near(&m, 1.0)).unwrap();
        assert!((data.coeffs[0][(0, 0)] - 1.0).norm() < 1e-12);
    }

    #[test]
    fn perturbation_is_detected() {
        let m = example1();
        let data = laurent_coeffs(&m, &root_near(&m, 1.0)).unwrap();
        let bumped = &data.coeffs[0] + &CMatrix::identity(2).scale(Complex64::new(0.01, 0.0));
        let perturbed = LaurentData::from_parts(&m, data.root.clone(), vec![bumped]).unwrap();
        assert!(perturbed.identity_residual >= 5e-3);
    }

    #[test]
    fn stable_under_radius_halving() {
        let m = example2(1.0);
        let root = root_near(&m, 1.0);
        let full = laurent_coeffs(&m, &root).unwrap();
        let mut half = root.clone();
        half.contour_radius *= 0.5;
        let half = laurent_coeffs(&m, &half).unwrap();
        for (a, b) in full.coeffs.iter().zip(&half.coeffs) {
            assert!(kernels::hs_norm(&(a - b)) <= 1e-7 * kernels::hs_norm(a).max(1.0));
        }
    }

    #[test]
    fn understated_pole_order_is_rejected() {
        let m = example2(1.0);
        let mut root = root_near(&m, 1.0);
        root.pole_order = 1;
        assert!(matches!(laurent_coeffs(&m, &root), Err(Error::PoleOrder(_))));
    }
}
