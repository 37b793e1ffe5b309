//! Dense complex matrix primitives.
//!
//! Every matrix in this crate is small (a handful of types times a small
//! pole order), so storage is plain row-major `Vec<Complex64>` and the
//! algorithms are the textbook ones.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported `exp(λ, x)` block size.
pub const MAX_EXP_BLOCK: usize = 20;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    /// Builds a matrix from row-major entries, rejecting empty shapes,
    /// length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix(format!("empty shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidMatrix(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|z| !z.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    /// Nested-row constructor, mostly for tests and fixtures.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidMatrix("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidMatrix("ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Self::from_real(r, c, &data)
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec_unchecked(rows, cols, vec![ZERO; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Row vector `e_i` of length `n`.
    pub fn unit_row(n: usize, i: usize) -> Self {
        let mut m = Self::zeros(1, n);
        m[(0, i)] = ONE;
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|z| z * s).collect())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn conj_transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    /// Rows `start..start+len` as a new matrix.
    pub fn row_block(&self, start: usize, len: usize) -> Self {
        Self::from_vec_unchecked(
            len,
            self.cols,
            self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        )
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.data[i * self.cols + l];
                if a == ZERO {
                    continue;
                }
                let rrow = &rhs.data[l * rhs.cols..(l + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.is_finite())
    }

    /// LU factorisation with partial pivoting; `None` when an exact zero
    /// pivot is met.
    pub fn lu(&self) -> Option<Lu> {
        assert!(self.is_square(), "lu of non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (piv, best) = (k..n)
                .map(|i| (i, a[i * n + k].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / d;
                a[i * n + k] = f;
                if f != ZERO {
                    for j in k + 1..n {
                        let t = a[k * n + j];
                        a[i * n + j] -= f * t;
                    }
                }
            }
        }
        Some(Lu { n, a, perm, sign })
    }

    pub fn determinant(&self) -> Result<Complex64> {
        if !self.is_square() {
            return Err(Error::NonSquare { rows: self.rows, cols: self.cols });
        }
        Ok(self.lu().map_or(ZERO, |lu| lu.determinant()))
    }

    pub fn inverse(&self) -> Result<CMatrix> {
        if !self.is_square() {
            return Err(Error::NonSquare { rows: self.rows, cols: self.cols });
        }
        let lu = self.lu().ok_or(Error::Singular)?;
        let inv = lu.inverse();
        if inv.is_finite() {
            Ok(inv)
        } else {
            Err(Error::Singular)
        }
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Real parts as a row-major vector.
    pub fn re(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        CMatrix::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        )
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        CMatrix::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        )
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:>12.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// JSON form: `{"rows": r, "cols": c, "data": [[re, im], ...]}` row-major.
#[derive(Serialize, Deserialize)]
struct CMatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl Serialize for CMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CMatrixRepr {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| [z.re, z.im]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = CMatrixRepr::deserialize(d)?;
        CMatrix::new(
            repr.rows,
            repr.cols,
            repr.data.iter().map(|&[re, im]| Complex64::new(re, im)).collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}

pub struct Lu {
    n: usize,
    a: Vec<Complex64>,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn determinant(&self) -> Complex64 {
        let mut d = Complex64::new(self.sign, 0.0);
        for k in 0..self.n {
            d *= self.a[k * self.n + k];
        }
        d
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let t = self.a[i * n + j] * x[j];
                x[i] -= t;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let t = self.a[i * n + j] * x[j];
                x[i] -= t;
            }
            x[i] /= self.a[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    pub fn inverse(&self) -> CMatrix {
        let n = self.n;
        let mut inv = CMatrix::zeros(n, n);
        let mut col = vec![ZERO; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = ZERO);
            col[j] = ONE;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Kronecker product: block `(i, j)` of the result is `a[i, j] * b`.
pub fn kronecker(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (m, n) = a.shape();
    let (k, l) = b.shape();
    let mut out = CMatrix::zeros(m * k, n * l);
    for i in 0..m {
        for j in 0..n {
            let s = a[(i, j)];
            for r in 0..k {
                for c in 0..l {
                    out[(i * k + r, j * l + c)] = s * b[(r, c)];
                }
            }
        }
    }
    out
}

/// The upper-triangular `k×k` matrix `exp(λ, x)` with entries
/// `e^{λx} x^{j-i} / (j-i)!` on and above the diagonal, i.e. the matrix
/// exponential of `x` times the `k×k` Jordan block at `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpMatrix {
    pub lambda: Complex64,
    pub x: f64,
    pub k: usize,
    pub matrix: CMatrix,
}

pub fn exp_matrix(lambda: Complex64, x: f64, k: usize) -> Result<ExpMatrix> {
    if k == 0 {
        return Err(Error::InvalidMatrix("exp matrix needs k >= 1".into()));
    }
    if k > MAX_EXP_BLOCK {
        return Err(Error::BlockTooLarge(k));
    }
    let mut coeffs = [ZERO; MAX_EXP_BLOCK];
    exp_coefficients(lambda, x, &mut coeffs[..k]);
    let mut m = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            m[(i, j)] = coeffs[j - i];
        }
    }
    Ok(ExpMatrix { lambda, x, k, matrix: m })
}

/// Fills `out[m] = e^{λx} x^m / m!` for `m < out.len()`; the distinct
/// diagonals of `exp(λ, x)`.
#[inline]
pub fn exp_coefficients(lambda: Complex64, x: f64, out: &mut [Complex64]) {
    let base = if lambda.im == 0.0 {
        Complex64::new((lambda.re * x).exp(), 0.0)
    } else {
        (lambda * x).exp()
    };
    let mut term = 1.0;
    for (m, slot) in out.iter_mut().enumerate() {
        if m > 0 {
            term *= x / m as f64;
        }
        *slot = base * term;
    }
}

/// `acc += E · b` where `E` is the upper-triangular Toeplitz matrix with
/// diagonals `coeffs` (an `exp(λ, x)` matrix) and `b` is `k×cols`,
/// both row-major.
#[inline]
pub(crate) fn accumulate_toeplitz(
    coeffs: &[Complex64],
    b: &[Complex64],
    cols: usize,
    acc: &mut [Complex64],
) {
    let k = coeffs.len();
    for a in 0..k {
        let out = &mut acc[a * cols..(a + 1) * cols];
        for d in 0..k - a {
            let c = coeffs[d];
            let row = &b[(a + d) * cols..(a + d + 1) * cols];
            for (o, v) in out.iter_mut().zip(row) {
                *o += c * v;
            }
        }
    }
}

/// Hilbert–Schmidt (Frobenius) norm.
pub fn hs_norm(m: &CMatrix) -> f64 {
    m.data().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral norm: the largest singular value.
pub fn op_norm(m: &CMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.to_nalgebra().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Perron root of a nonnegative matrix.
#[derive(Clone, Debug)]
pub struct PerronRoot {
    pub rho: f64,
    /// Nonnegative right eigenvector (unit ℓ1 norm), present when the
    /// matrix is irreducible and `rho > 0`.
    pub eigenvector: Option<Vec<f64>>,
}

/// Validates and extracts a square nonnegative real matrix.
pub(crate) fn nonnegative_entries(m: &CMatrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::NonSquare { rows: m.rows(), cols: m.cols() });
    }
    let n = m.rows();
    let mut out = Vec::with_capacity(n * n);
    for (idx, z) in m.data().iter().enumerate() {
        if !(z.re.is_finite() && z.re >= 0.0 && z.im == 0.0) {
            return Err(Error::NegativeEntry { row: idx / n, col: idx % n, value: *z });
        }
        out.push(z.re);
    }
    Ok(out)
}

/// Boolean reachability closure of the nonzero pattern (`reach[i][j]`:
/// a path of length >= 1 from `i` to `j`).
fn reachability(a: &[f64], n: usize) -> Vec<bool> {
    let mut r: Vec<bool> = a.iter().map(|&x| x > 0.0).collect();
    for k in 0..n {
        for i in 0..n {
            if r[i * n + k] {
                for j in 0..n {
                    if r[k * n + j] {
                        r[i * n + j] = true;
                    }
                }
            }
        }
    }
    r
}

/// Strongly connected classes of the nonzero pattern.
fn communicating_classes(a: &[f64], n: usize) -> Vec<Vec<usize>> {
    let r = reachability(a, n);
    let mut assigned = vec![false; n];
    let mut classes = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let class: Vec<usize> = (0..n)
            .filter(|&j| j == i || (r[i * n + j] && r[j * n + i]))
            .collect();
        for &j in &class {
            assigned[j] = true;
        }
        classes.push(class);
    }
    classes
}

/// Whether some power of the pattern (up to the Wielandt bound) is positive.
pub(crate) fn is_primitive_pattern(a: &[f64], n: usize) -> bool {
    let base: Vec<bool> = a.iter().map(|&x| x > 0.0).collect();
    let mut pow = base.clone();
    let bound = (n - 1) * (n - 1) + 1;
    for _ in 0..bound.max(1) {
        if pow.iter().all(|&b| b) {
            return true;
        }
        let mut next = vec![false; n * n];
        for i in 0..n {
            for l in 0..n {
                if pow[i * n + l] {
                    for j in 0..n {
                        if base[l * n + j] {
                            next[i * n + j] = true;
                        }
                    }
                }
            }
        }
        pow = next;
    }
    pow.iter().all(|&b| b)
}

/// Whether `m` (nonnegative) is primitive.
pub fn is_primitive(m: &CMatrix) -> Result<bool> {
    let a = nonnegative_entries(m)?;
    Ok(is_primitive_pattern(&a, m.rows()))
}

const POWER_MAX_ITERS: usize = 5_000;

/// Perron root of an irreducible nonnegative block via power iteration
/// with Collatz–Wielandt bracketing. Periodic blocks are shifted by the
/// identity first. Returns `None` when the bracket fails to close.
fn irreducible_perron(b: &[f64], n: usize) -> Option<(f64, Vec<f64>)> {
    let shift = if is_primitive_pattern(b, n) { 0.0 } else { 1.0 };
    let mut x = vec![1.0 / n as f64; n];
    let mut y = vec![0.0; n];
    for _ in 0..POWER_MAX_ITERS {
        for i in 0..n {
            y[i] = shift * x[i] + (0..n).map(|j| b[i * n + j] * x[j]).sum::<f64>();
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let total: f64 = y.iter().sum();
        for i in 0..n {
            x[i] = y[i] / total;
        }
        if hi - lo <= 1e-13 * hi {
            return Some((0.5 * (lo + hi) - shift, x));
        }
    }
    None
}

fn schur_spectral_radius(b: &[f64], n: usize) -> f64 {
    let m = DMatrix::from_row_slice(n, n, b);
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Perron root `ρ(m)` of a square nonnegative matrix.
///
/// The matrix is split into its communicating classes; the Perron root is
/// the largest root over the irreducible diagonal blocks, each found by
/// power iteration. A Schur eigenvalue solve is the fallback when the
/// power iteration does not close its bracket.
pub fn spectral_radius(m: &CMatrix) -> Result<PerronRoot> {
    let a = nonnegative_entries(m)?;
    let n = m.rows();
    let classes = communicating_classes(&a, n);
    let mut rho = 0.0f64;
    let mut vector = None;
    for class in &classes {
        let c = class.len();
        let block: Vec<f64> = class
            .iter()
            .flat_map(|&i| class.iter().map(move |&j| (i, j)))
            .map(|(i, j)| a[i * n + j])
            .collect();
        let (r, v) = if c == 1 {
            (block[0], vec![1.0])
        } else {
            match irreducible_perron(&block, c) {
                Some(rv) => rv,
                None => {
                    log::debug!("power iteration stalled on a {c}x{c} block; using Schur");
                    (schur_spectral_radius(&block, c), vec![])
                }
            }
        };
        rho = rho.max(r);
        if classes.len() == 1 && r > 0.0 && v.len() == n {
            vector = Some(v);
        }
    }
    Ok(PerronRoot { rho, eigenvector: vector })
}
