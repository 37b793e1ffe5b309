use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, CMatrix};
use crate::models::OffspringModel;

use super::laurent::contour_coefficients;

/// A zero of `z ↦ det(I − 𝓛μ(z))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicRoot {
    pub lambda: Complex64,
    /// Maximal pole order over the entries of the resolvent at `lambda`.
    pub pole_order: usize,
    /// Multiplicity of `lambda` as a zero of the determinant.
    pub zero_order: usize,
    /// `|det(I − 𝓛μ(lambda))|` after polishing.
    pub det_residual: f64,
    /// Radius of the circle used for Laurent extraction.
    pub contour_radius: f64,
}

/// Closed axis-aligned rectangle in the complex plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Region {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Self {
        Self { re_min, re_max, im_min, im_max }
    }

    /// `[α/4, 2α] × [−5α, 5α]`, pulled inside the domain when needed.
    pub fn around_alpha(model: &OffspringModel, alpha: f64) -> Self {
        let edge = model.abscissa() + 1e-6;
        Self::new((alpha / 4.0).max(edge), 2.0 * alpha, -5.0 * alpha, 5.0 * alpha)
    }

    fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    fn half_diagonal(&self) -> f64 {
        0.5 * (self.re_max - self.re_min).hypot(self.im_max - self.im_min)
    }

    fn grown(&self, by: f64) -> Self {
        Self::new(self.re_min - by, self.re_max + by, self.im_min - by, self.im_max + by)
    }

    fn split(&self, fx: f64, fy: f64) -> [Region; 4] {
        let x = self.re_min + fx * (self.re_max - self.re_min);
        let y = self.im_min + fy * (self.im_max - self.im_min);
        [
            Self::new(self.re_min, x, self.im_min, y),
            Self::new(x, self.re_max, self.im_min, y),
            Self::new(self.re_min, x, y, self.im_max),
            Self::new(x, self.re_max, y, self.im_max),
        ]
    }
}

/// Determinant and logarithmic derivative of `det(I − 𝓛μ(z))`.
#[derive(Clone, Copy, Debug)]
pub struct CharEval {
    pub det: Complex64,
    /// `d/dz log det(I − 𝓛μ(z)) = −tr((I − 𝓛μ(z))^{-1} 𝓛μ′(z))`.
    pub log_derivative: Complex64,
}

pub fn characteristic_det(model: &OffspringModel, z: Complex64) -> Result<Complex64> {
    let l = model.laplace_derivative(z, 0)?;
    (&CMatrix::identity(model.p()) - &l).determinant()
}

pub fn characteristic_eval(model: &OffspringModel, z: Complex64) -> Result<CharEval> {
    let ev = model.laplace_matrix(z, 1)?;
    let p = model.p();
    let lu = (&CMatrix::identity(p) - &ev.value).lu().ok_or(Error::Singular)?;
    let d1 = &ev.derivatives[1];
    let mut col = vec![Complex64::new(0.0, 0.0); p];
    let mut trace = Complex64::new(0.0, 0.0);
    for j in 0..p {
        for i in 0..p {
            col[i] = d1[(i, j)];
        }
        lu.solve_in_place(&mut col);
        trace += col[j];
    }
    let log_derivative = -trace;
    if !log_derivative.is_finite() {
        return Err(Error::Singular);
    }
    Ok(CharEval { det: lu.determinant(), log_derivative })
}

/// `(I − 𝓛μ(z))^{-1}`.
pub fn resolvent(model: &OffspringModel, z: Complex64) -> Result<CMatrix> {
    let l = model.laplace_derivative(z, 0)?;
    (&CMatrix::identity(model.p()) - &l).inverse()
}

const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_3,
    0.219_086_362_515_982_0,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

/// Moments `(1/2πi) ∮ ((z−c)/h)^j f′/f dz`, `j < MOMENTS`.
const MOMENTS: usize = 9;
const MAX_DEPTH: usize = 40;
/// Accepted quadrature error per unit of contour length, or per unit of
/// `∫|f′/f||dz|` where the integrand is large.
const TOL_DENSITY: f64 = 1e-12;
const WINDING_TOL: f64 = 1e-3;
const CLUSTER_TOL: f64 = 1e-9;
const SPLIT_OFFSETS: [(f64, f64); 4] =
    [(0.512_3, 0.487_1), (0.462_9, 0.531_7), (0.579_1, 0.443_3), (0.421_7, 0.568_9)];
const BOUNDARY_NUDGES: [f64; 4] = [0.0, 1e-6, -1e-6, 2e-6];

type Moments = [Complex64; MOMENTS];

struct Contour<'a> {
    model: &'a OffspringModel,
    center: Complex64,
    scale: f64,
}

impl Contour<'_> {
    /// Moments over the segment and the mass `∫|f′/f||dz|`.
    fn panel(&self, a: Complex64, b: Complex64) -> Result<(Moments, f64)> {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut out = [Complex64::new(0.0, 0.0); MOMENTS];
        let mut mass = 0.0;
        for (&x, &w) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            for z in [mid - half * x, mid + half * x] {
                let g = characteristic_eval(self.model, z)?.log_derivative * half * w;
                mass += g.norm();
                let u = (z - self.center) / self.scale;
                let mut pow = Complex64::new(1.0, 0.0);
                for slot in out.iter_mut() {
                    *slot += g * pow;
                    pow *= u;
                }
            }
        }
        Ok((out, mass))
    }

    fn edge(&self, a: Complex64, b: Complex64) -> Result<Moments> {
        let (coarse, _) = self.panel(a, b)?;
        self.refine(a, b, coarse, 0)
    }

    fn refine(&self, a: Complex64, b: Complex64, coarse: Moments, depth: usize) -> Result<Moments> {
        let m = 0.5 * (a + b);
        let (left, left_mass) = self.panel(a, m)?;
        let (right, right_mass) = self.panel(m, b)?;
        let mut fine = left;
        let mut diff = 0.0f64;
        for j in 0..MOMENTS {
            fine[j] += right[j];
            diff = diff.max((fine[j] - coarse[j]).norm());
        }
        if diff <= TOL_DENSITY * (b - a).norm().max(left_mass + right_mass) {
            return Ok(fine);
        }
        if depth >= MAX_DEPTH {
            return Err(Error::QuadratureNonConvergence(format!(
                "adaptive panel [{a}, {b}] did not settle (difference {diff:e})"
            )));
        }
        let l = self.refine(a, m, left, depth + 1)?;
        let r = self.refine(m, b, right, depth + 1)?;
        let mut out = l;
        for j in 0..MOMENTS {
            out[j] += r[j];
        }
        Ok(out)
    }
}

fn cell_moments(model: &OffspringModel, cell: &Region) -> Result<Moments> {
    let contour = Contour { model, center: cell.center(), scale: cell.half_diagonal() };
    let corners = [
        Complex64::new(cell.re_min, cell.im_min),
        Complex64::new(cell.re_max, cell.im_min),
        Complex64::new(cell.re_max, cell.im_max),
        Complex64::new(cell.re_min, cell.im_max),
    ];
    let mut total = [Complex64::new(0.0, 0.0); MOMENTS];
    for e in 0..4 {
        let part = contour.edge(corners[e], corners[(e + 1) % 4])?;
        for j in 0..MOMENTS {
            total[j] += part[j];
        }
    }
    let norm = Complex64::new(0.0, 2.0 * PI);
    Ok(total.map(|x| x / norm))
}

/// Rounds a winding integral to an integer when it is close enough.
fn winding(value: Complex64) -> Option<usize> {
    let n = value.re.round();
    ((value - n).norm() <= WINDING_TOL && n >= 0.0).then_some(n as usize)
}

fn counted(model: &OffspringModel, cell: &Region) -> Result<(usize, Moments)> {
    let m = cell_moments(model, cell)?;
    let n = winding(m[0]).ok_or_else(|| {
        Error::QuadratureNonConvergence(format!("winding integral {} is not an integer", m[0]))
    })?;
    Ok((n, m))
}

fn check_region(model: &OffspringModel, region: &Region) -> Result<()> {
    let ok = region.re_min < region.re_max
        && region.im_min < region.im_max
        && [region.re_min, region.re_max, region.im_min, region.im_max]
            .iter()
            .all(|x| x.is_finite());
    if !ok {
        return Err(Error::Precondition(format!("degenerate region {region:?}")));
    }
    if !model.in_domain(Complex64::new(region.re_min, 0.0)) {
        return Err(Error::Precondition(format!(
            "region starts at Re z = {} but the Laplace domain is Re z > {}",
            region.re_min,
            model.abscissa()
        )));
    }
    Ok(())
}

/// Top-level count with the boundary-nudge retry.
fn count_top(model: &OffspringModel, region: &Region) -> Result<(Region, usize, Moments)> {
    let mut last = None;
    for nudge in BOUNDARY_NUDGES {
        let cell = region.grown(nudge);
        if !model.in_domain(Complex64::new(cell.re_min, 0.0)) {
            continue;
        }
        match counted(model, &cell) {
            Ok((n, m)) => return Ok((cell, n, m)),
            Err(e) => {
                log::debug!("boundary winding failed for {cell:?}: {e}");
                last = Some(e);
            }
        }
    }
    Err(Error::RootOnBoundary(format!(
        "winding integral ill-conditioned on {region:?} after nudging: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Number of zeros of `det(I − 𝓛μ)` in the region, with multiplicity.
pub fn count_zeros(model: &OffspringModel, region: &Region) -> Result<usize> {
    check_region(model, region)?;
    Ok(count_top(model, region)?.1)
}

/// Shifted power sums `Σ (u_r − ζ)^j`, `j = 2..=n`, from raw power sums
/// `s_j = Σ u_r^j` with `ζ = s_1/n`.
fn centered_power_sums(s: &Moments, n: usize) -> Vec<Complex64> {
    let zeta = s[1] / n as f64;
    (2..=n)
        .map(|j| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut binom = 1.0;
            for i in 0..=j {
                acc += binom * s[i] * (-zeta).powi((j - i) as i32);
                binom = binom * (j - i) as f64 / (i + 1) as f64;
            }
            acc
        })
        .collect()
}

/// Modified Newton on `det`, accepting only steps that reduce `|det|`.
fn polish(model: &OffspringModel, z0: Complex64, multiplicity: usize) -> Complex64 {
    let mut z = z0;
    let Ok(mut best) = characteristic_det(model, z).map(|d| d.norm()) else {
        return z;
    };
    for _ in 0..100 {
        if best == 0.0 {
            break;
        }
        let Ok(ev) = characteristic_eval(model, z) else { break };
        let step = multiplicity as f64 / ev.log_derivative;
        if !step.is_finite() {
            break;
        }
        let next = z - step;
        let Ok(d) = characteristic_det(model, next).map(|d| d.norm()) else { break };
        if d < best {
            z = next;
            best = d;
            if step.norm() <= 1e-15 * (1.0 + z.norm()) {
                break;
            }
        } else {
            break;
        }
    }
    z
}

fn locate(
    model: &OffspringModel,
    cell: &Region,
    n: usize,
    m: &Moments,
    depth: usize,
    out: &mut Vec<(Complex64, usize)>,
) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    let c = cell.center();
    let h = cell.half_diagonal();
    if n == 1 {
        out.push((polish(model, c + h * m[1], 1), 1));
        return Ok(());
    }
    let tiny = h <= 1e-10 * (1.0 + c.norm()) || depth >= 60;
    if n < MOMENTS || tiny {
        let clustered = tiny
            || centered_power_sums(m, n).iter().all(|t| t.norm() <= CLUSTER_TOL * n as f64);
        if clustered {
            let centroid = c + h * m[1] / n as f64;
            out.push((polish(model, centroid, n), n));
            return Ok(());
        }
    }
    let mut last = None;
    for (fx, fy) in SPLIT_OFFSETS {
        let children = cell.split(fx, fy);
        let counts: Result<Vec<(usize, Moments)>> =
            children.iter().map(|child| counted(model, child)).collect();
        match counts {
            Ok(counts) if counts.iter().map(|x| x.0).sum::<usize>() == n => {
                for (child, (cn, cm)) in children.iter().zip(&counts) {
                    locate(model, child, *cn, cm, depth + 1, out)?;
                }
                return Ok(());
            }
            Ok(counts) => {
                last = Some(format!(
                    "child counts {:?} do not add up to {n}",
                    counts.iter().map(|x| x.0).collect::<Vec<_>>()
                ))
            }
            Err(e) => last = Some(e.to_string()),
        }
    }
    Err(Error::RootOnBoundary(format!(
        "could not subdivide {cell:?}: {}",
        last.unwrap_or_default()
    )))
}

/// Radius-`radius` winding number of `det(I − 𝓛μ)` about `center`, by the
/// trapezoid rule with `nodes` points.
pub(crate) fn circle_winding(
    model: &OffspringModel,
    center: Complex64,
    radius: f64,
    nodes: usize,
) -> Result<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..nodes {
        let e = Complex64::from_polar(radius, 2.0 * PI * m as f64 / nodes as f64);
        acc += characteristic_eval(model, center + e)?.log_derivative * e;
    }
    Ok(acc / nodes as f64)
}

const CIRCLE_NODES: usize = 256;
const MAX_RADIUS: f64 = 0.5;
/// Relative threshold below which a Laurent coefficient counts as zero.
pub(crate) const COEFF_ZERO_TOL: f64 = 1e-8;

/// All zeros of `det(I − 𝓛μ(z))` in the region, sorted by `(Re, Im)`.
pub fn find_roots(model: &OffspringModel, region: &Region) -> Result<Vec<CharacteristicRoot>> {
    check_region(model, region)?;
    let (cell, n, m) = count_top(model, region)?;
    let mut raw = Vec::new();
    locate(model, &cell, n, &m, 0, &mut raw)?;
    raw.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));

    // real models have conjugate-symmetric roots; snap numerically real ones
    for (z, mult) in raw.iter_mut() {
        if z.im.abs() <= 1e-12 * (1.0 + z.norm()) {
            *z = polish(model, Complex64::new(z.re, 0.0), *mult);
        }
    }
    let abscissa = model.abscissa();
    let mut roots = Vec::with_capacity(raw.len());
    for (i, &(lambda, mult)) in raw.iter().enumerate() {
        let nearest = raw
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, other)| (other.0 - lambda).norm())
            .fold(f64::INFINITY, f64::min);
        let boundary = lambda.re - abscissa;
        let radius = (0.4 * nearest.min(boundary)).min(MAX_RADIUS);
        let w = circle_winding(model, lambda, radius / 4.0, CIRCLE_NODES)?;
        let zero_order = winding(w).filter(|&k| k > 0).ok_or_else(|| {
            Error::QuadratureNonConvergence(format!("winding {w} about {lambda} is not a positive integer"))
        })?;
        if zero_order != mult {
            log::warn!("root {lambda}: cell count {mult} but circle winding {zero_order}");
        }
        let coeffs = contour_coefficients(model, lambda, radius, zero_order, CIRCLE_NODES)?;
        let norms: Vec<f64> = coeffs.iter().map(kernels::hs_norm).collect();
        let scale = norms.iter().copied().fold(1.0, f64::max);
        let pole_order = norms
            .iter()
            .rposition(|&x| x > COEFF_ZERO_TOL * scale)
            .map(|i| i + 1)
            .ok_or_else(|| Error::PoleOrder(format!("resolvent has no principal part at {lambda}")))?;
        let det_residual = characteristic_det(model, lambda)?.norm();
        roots.push(CharacteristicRoot { lambda, pole_order, zero_order, det_residual, contour_radius: radius });
    }
    Ok(roots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin::*;
    use crate::models::{Ancestor, PointProcessSpec};

    #[test]
    fn example1_single_simple_root() {
        let roots = find_roots(&example1(), &Region::new(0.25, 2.0, -5.0, 5.0)).unwrap();
        assert_eq!(roots.len(), 1);
        let r = &roots[0];
        assert!((r.lambda - 1.0).norm() < 1e-12);
        assert_eq!((r.pole_order, r.zero_order), (1, 1));
        assert!(r.det_residual <= 1e-10);
        assert!((r.contour_radius - 0.4).abs() < 1e-12);
    }

    #[test]
    fn example2_double_root() {
        for a in [1.0, 2.0] {
            let m = example2(a);
            let roots = find_roots(&m, &Region::around_alpha(&m, a)).unwrap();
            assert_eq!(roots.len(), 1, "{roots:?}");
            assert!((roots[0].lambda - a).norm() < 1e-9);
            assert_eq!((roots[0].pole_order, roots[0].zero_order), (2, 2));
            assert!(roots[0].det_residual <= 1e-10);
        }
    }

    #[test]
    fn poisson_single_root() {
        let roots = find_roots(&single_type_poisson(1.0), &Region::new(0.5, 2.0, -20.0, 20.0)).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0].lambda - 1.0).norm() < 1e-13);
    }

    #[test]
    fn decoupled_types_have_pole_order_below_zero_order() {
        let m = OffspringModel::new(
            2,
            vec![
                PointProcessSpec::Poisson { rate: 1.0 },
                PointProcessSpec::Empty,
                PointProcessSpec::Empty,
                PointProcessSpec::Poisson { rate: 1.0 },
            ],
            Ancestor::Fixed(0),
        )
        .unwrap();
        let roots = find_roots(&m, &Region::new(0.25, 2.0, -2.0, 2.0)).unwrap();
        assert_eq!(roots.len(), 1);
        assert_eq!((roots[0].zero_order, roots[0].pole_order), (2, 1));
    }

    #[test]
    fn complex_roots_from_a_delayed_atom() {
        // 1 − 2e^{-z} = 0 at z = ln 2 + 2πik
        let m = OffspringModel::new(
            1,
            vec![PointProcessSpec::FixedAtom { time: 1.0, count: 2 }],
            Ancestor::Fixed(0),
        )
        .unwrap();
        let region = Region::new(0.1, 1.5, -10.0, 10.0);
        let mut roots = find_roots(&m, &region).unwrap();
        assert_eq!(roots.len(), 3);
        roots.sort_by(|a, b| a.lambda.im.total_cmp(&b.lambda.im));
        for (r, k) in roots.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((r.lambda - Complex64::new(2f64.ln(), 2.0 * PI * k)).norm() < 1e-12, "{r:?}");
            assert_eq!(r.pole_order, 1);
        }
        assert_eq!(count_zeros(&m, &region).unwrap(), 3);
    }

    #[test]
    fn winding_total_matches_orders() {
        let m = fully_connected_poisson(1.0);
        let region = Region::new(0.3, 5.0, -3.0, 3.0);
        let total = count_zeros(&m, &region).unwrap();
        let roots = find_roots(&m, &region).unwrap();
        assert_eq!(total, roots.iter().map(|r| r.zero_order).sum::<usize>());
    }

    #[test]
    fn region_outside_domain_is_rejected() {
        assert!(matches!(
            find_roots(&example1(), &Region::new(-0.5, 2.0, -1.0, 1.0)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn power_sums_detect_clusters() {
        let mut s = [Complex64::new(0.0, 0.0); MOMENTS];
        let u = Complex64::new(0.1, -0.2);
        for (j, slot) in s.iter_mut().enumerate() {
            *slot = 3.0 * u.powi(j as i32);
        }
        assert!(centered_power_sums(&s, 3).iter().all(|t| t.norm() < 1e-15));
        let v = Complex64::new(0.3, 0.0);
        for (j, slot) in s.iter_mut().enumerate() {
            *slot = u.powi(j as i32) + v.powi(j as i32);
        }
        let t = centered_power_sums(&s, 2);
        assert!((t[0] - 0.5 * (u - v).powi(2)).norm() < 1e-15);
    }
}
