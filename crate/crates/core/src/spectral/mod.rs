//! Malthusian parameter, characteristic roots and Laurent expansions of
//! the resolvent `(I − 𝓛μ(z))^{-1}`.

mod laurent;
mod perron;
mod roots;

pub use laurent::{laurent_coeffs, stack, verify_identities, LaurentData};
pub use perron::{find_malthusian, perron_root_at, PerronData};
pub use roots::{
    characteristic_det, characteristic_eval, count_zeros, find_roots, resolvent, CharEval,
    CharacteristicRoot, Region,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernels::{self, CMatrix};
use crate::models::OffspringModel;

/// Checks on the residue at `α` when `𝓛μ(α)` is primitive.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrimitiveReport {
    /// False when `𝓛μ(α)` is not primitive; the measurements are then unset.
    pub applicable: bool,
    pub pole_order: usize,
    /// `max(‖A·𝓛μ(α) − A‖, ‖𝓛μ(α)·A − A‖)` in HS norm.
    pub commutation_residual: Option<f64>,
    pub second_singular_value: Option<f64>,
    /// The scalar `a` with `A_{α,1} = a·v·w`.
    pub scale: Option<f64>,
    /// `‖A_{α,1}/a − v·w‖_HS`.
    pub projection_residual: Option<f64>,
    pub passed: bool,
}

impl PrimitiveReport {
    fn not_applicable(pole_order: usize) -> Self {
        Self {
            applicable: false,
            pole_order,
            commutation_residual: None,
            second_singular_value: None,
            scale: None,
            projection_residual: None,
            passed: false,
        }
    }
}

const PRIMITIVE_TOL: f64 = 1e-8;

/// Verifies that the residue at `α` is a scalar multiple of the Perron
/// projection `v·w` in the primitive case.
pub fn check_primitive_case(
    model: &OffspringModel,
    perron: &PerronData,
    data: &LaurentData,
) -> Result<PrimitiveReport> {
    if !perron.primitive || !perron.normalized {
        return Ok(PrimitiveReport::not_applicable(data.pole_order()));
    }
    let l = model.laplace_real(perron.alpha)?;
    let a = &data.coeffs[0];
    let commutation = kernels::hs_norm(&(&a.matmul(&l) - a)).max(kernels::hs_norm(&(&l.matmul(a) - a)));
    let sv = kernels::singular_values(a);
    let second = sv.get(1).copied().unwrap_or(0.0);
    let p = model.p();
    let v: Vec<Complex64> = perron.right_vec.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let w: Vec<Complex64> = perron.left_vec.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut wav = Complex64::new(0.0, 0.0);
    for i in 0..p {
        for j in 0..p {
            wav += w[i] * a[(i, j)] * v[j];
        }
    }
    let scale = wav.re;
    let projection = perron.projection();
    let projection_residual = kernels::hs_norm(&(&a.scale(Complex64::new(1.0 / scale, 0.0)) - &projection));
    let passed = data.pole_order() == 1
        && commutation <= PRIMITIVE_TOL * scale.abs().max(1.0)
        && second <= PRIMITIVE_TOL
        && projection_residual <= PRIMITIVE_TOL;
    Ok(PrimitiveReport {
        applicable: true,
        pole_order: data.pole_order(),
        commutation_residual: Some(commutation),
        second_singular_value: Some(second),
        scale: Some(scale),
        projection_residual: Some(projection_residual),
        passed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RootEntry {
    pub re: f64,
    pub im: f64,
    /// Pole order of the resolvent.
    pub order: usize,
    pub zero_order: usize,
    pub residual: f64,
    pub contour_radius: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaurentEntry {
    pub root: [f64; 2],
    /// `A_1, …, A_k`, each as `{rows, cols, data: [[re, im], …]}` row-major.
    pub matrices: Vec<CMatrix>,
    pub stacked: CMatrix,
    pub identity_residual: f64,
}

/// Everything the analysis learns about a model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub alpha: f64,
    pub perron: PerronData,
    pub region: Region,
    /// Zeros in the region counted with multiplicity.
    pub total_winding: usize,
    pub roots: Vec<RootEntry>,
    pub laurent: Vec<LaurentEntry>,
    pub primitive: PrimitiveReport,
}

impl SpectralReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Laurent entry of the root nearest `target`.
    pub fn nearest(&self, target: Complex64) -> Option<(&RootEntry, &LaurentEntry)> {
        self.roots
            .iter()
            .zip(&self.laurent)
            .min_by(|a, b| {
                let da = (Complex64::new(a.0.re, a.0.im) - target).norm();
                let db = (Complex64::new(b.0.re, b.0.im) - target).norm();
                da.total_cmp(&db)
            })
    }
}

/// Full analysis: `α`, roots in `region` (default `[α/4, 2α] × [−5α, 5α]`),
/// Laurent data for each root, and the primitive-case check at `α`.
pub fn analyze(model: &OffspringModel, region: Option<Region>) -> Result<SpectralReport> {
    let perron = find_malthusian(model)?;
    let region = region.unwrap_or_else(|| Region::around_alpha(model, perron.alpha));
    let total_winding = count_zeros(model, &region)?;
    let found = find_roots(model, &region)?;
    let mut roots = Vec::with_capacity(found.len());
    let mut laurent = Vec::with_capacity(found.len());
    let mut at_alpha: Option<LaurentData> = None;
    for root in &found {
        let data = laurent_coeffs(model, root)?;
        roots.push(RootEntry {
            re: root.lambda.re,
            im: root.lambda.im,
            order: root.pole_order,
            zero_order: root.zero_order,
            residual: root.det_residual,
            contour_radius: data.root.contour_radius,
        });
        laurent.push(LaurentEntry {
            root: [root.lambda.re, root.lambda.im],
            matrices: data.coeffs.clone(),
            stacked: data.stacked.clone(),
            identity_residual: data.identity_residual,
        });
        if (root.lambda - perron.alpha).norm() < 1e-6 {
            at_alpha = Some(data);
        }
    }
    let primitive = match &at_alpha {
        Some(data) => check_primitive_case(model, &perron, data)?,
        None => PrimitiveReport::not_applicable(0),
    };
    Ok(SpectralReport { alpha: perron.alpha, perron, region, total_winding, roots, laurent, primitive })
}
