//! Small dense matrix kernel.
//!
//! Everything here is sized for the state dimensions this crate deals with
//! (one to a few dozen). Storage is dense row-major, eigenvalues come from
//! cyclic Jacobi rotations and definite solves go through a Cholesky
//! factorization whose pivots double as the positive-definiteness test.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Stopping threshold for Jacobi sweeps, relative to the Frobenius norm.
pub const JACOBI_REL_TOL: f64 = 1e-12;
/// Accuracy contract of [`min_eigenvalue`].
pub const EIG_TOL: f64 = 1e-10;
/// Relative residual contract of [`solve_definite`].
pub const LIN_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric: |m[{i}][{j}] - m[{j}][{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
}

/// General dense real matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct GenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GenMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a list of rows; all rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(LinalgError::DimensionMismatch(
                "ragged or empty rows".into(),
            ));
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise operation on mismatched shapes"
        );
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn tr_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "tr_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let row = &other.data[k * other.cols..(k + 1) * other.cols];
            for i in 0..self.cols {
                let a = self.get(k, i);
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "mul_vec shape mismatch");
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl fmt::Debug for GenMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GenMatrix{:?}", self.to_rows())
    }
}

impl Add for &GenMatrix {
    type Output = GenMatrix;
    fn add(self, rhs: Self) -> GenMatrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &GenMatrix {
    type Output = GenMatrix;
    fn sub(self, rhs: Self) -> GenMatrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul for &GenMatrix {
    type Output = GenMatrix;
    fn mul(self, rhs: Self) -> GenMatrix {
        self.matmul(rhs)
    }
}

impl Neg for &GenMatrix {
    type Output = GenMatrix;
    fn neg(self) -> GenMatrix {
        self.map(|v| -v)
    }
}

/// Dense symmetric matrix. Symmetry is exact: every constructor mirrors one
/// triangle into the other, and every operation that could break it
/// re-mirrors.
#[derive(Clone, PartialEq)]
pub struct SymMatrix(GenMatrix);

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self(GenMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(GenMatrix::identity(dim))
    }

    pub fn scalar(v: f64) -> Self {
        Self(GenMatrix::scalar(v))
    }

    pub fn diag(values: &[f64]) -> Self {
        Self(GenMatrix::diag(values))
    }

    /// Builds from the upper triangle of `f` (`i <= j`), mirrored.
    pub fn from_upper(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = GenMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        Self(m)
    }

    /// Accepts `m` if it is square and symmetric to within `tol` (absolute,
    /// entrywise); the result is the symmetric part of `m`.
    pub fn try_from_gen(m: GenMatrix, tol: f64) -> Result<Self, LinalgError> {
        if !m.is_square() {
            return Err(LinalgError::NonSquare {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        for i in 0..m.rows() {
            for j in (i + 1)..m.cols() {
                let gap = (m.get(i, j) - m.get(j, i)).abs();
                if !(gap <= tol) {
                    return Err(LinalgError::NotSymmetric { i, j, gap });
                }
            }
        }
        symmetrize(&m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_gen(&self) -> &GenMatrix {
        &self.0
    }

    pub fn into_gen(self) -> GenMatrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    /// `xᵀ·self·x`, re-symmetrized.
    pub fn congruence(&self, x: &GenMatrix) -> SymMatrix {
        let sx = self.0.matmul(x);
        symmetrize(&x.tr_matmul(&sx)).expect("congruence is square")
    }

    /// `self + s·I`.
    pub fn shift(&self, s: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..self.dim() {
            m.set(i, i, m.get(i, i) + s);
        }
        Self(m)
    }

    /// Full spectrum in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev = jacobi_eigenvalues(&self.0);
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(self)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let n = self.dim();
        if n == 1 {
            return self.get(0, 0);
        }
        jacobi_eigenvalues(&self.0)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMatrix{:?}", self.0.to_rows())
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: Self) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: Self) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        SymMatrix(-&self.0)
    }
}

impl AsRef<GenMatrix> for SymMatrix {
    fn as_ref(&self) -> &GenMatrix {
        &self.0
    }
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &GenMatrix) -> Result<SymMatrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(SymMatrix::from_upper(m.rows(), |i, j| {
        if i == j {
            m.get(i, i)
        } else {
            0.5 * (m.get(i, j) + m.get(j, i))
        }
    }))
}

/// Eigenvalues (unordered) of a symmetric matrix by cyclic Jacobi sweeps.
fn jacobi_eigenvalues(m: &GenMatrix) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.clone();
    let norm = a.frobenius();
    if n == 1 || norm == 0.0 {
        return (0..n).map(|i| a.get(i, i)).collect();
    }
    let stop = JACOBI_REL_TOL * norm;

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off < stop {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
            }
        }
    }
    (0..n).map(|i| a.get(i, i)).collect()
}

/// Smallest eigenvalue of `m`.
pub fn min_eigenvalue(m: &SymMatrix) -> f64 {
    match m.dim() {
        1 => m.get(0, 0),
        _ => jacobi_eigenvalues(m.as_gen())
            .into_iter()
            .fold(f64::INFINITY, f64::min),
    }
}

/// `λ_min(m) >= margin`.
pub fn is_definite(m: &SymMatrix, margin: f64) -> bool {
    min_eigenvalue(m) >= margin
}

/// Lower-triangular Cholesky factor `L` with `M = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: GenMatrix,
}

impl Cholesky {
    pub fn factor(m: &SymMatrix) -> Result<Self, LinalgError> {
        let n = m.dim();
        let mut l = GenMatrix::zeros(n, n);
        for j in 0..n {
            let mut pivot = m.get(j, j);
            for k in 0..j {
                pivot -= l.get(j, k).powi(2);
            }
            if !(pivot > 0.0) {
                return Err(LinalgError::NotPositiveDefinite {
                    pivot: j,
                    value: pivot,
                });
            }
            let ljj = pivot.sqrt();
            l.set(j, j, ljj);
            for i in (j + 1)..n {
                let mut v = m.get(i, j);
                for k in 0..j {
                    v -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, v / ljj);
            }
        }
        Ok(Self { l })
    }

    /// `det(M)` as the squared product of the pivots.
    pub fn determinant(&self) -> f64 {
        (0..self.l.rows())
            .map(|i| self.l.get(i, i).powi(2))
            .product()
    }

    pub fn solve(&self, rhs: &GenMatrix) -> Result<GenMatrix, LinalgError> {
        let n = self.l.rows();
        if rhs.rows() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "rhs has {} rows, factor is {n}x{n}",
                rhs.rows()
            )));
        }
        let mut x = rhs.clone();
        for c in 0..rhs.cols() {
            // forward: L y = b
            for i in 0..n {
                let mut v = x.get(i, c);
                for k in 0..i {
                    v -= self.l.get(i, k) * x.get(k, c);
                }
                x.set(i, c, v / self.l.get(i, i));
            }
            // backward: Lᵀ x = y
            for i in (0..n).rev() {
                let mut v = x.get(i, c);
                for k in (i + 1)..n {
                    v -= self.l.get(k, i) * x.get(k, c);
                }
                x.set(i, c, v / self.l.get(i, i));
            }
        }
        Ok(x)
    }
}

/// Solves `M·X = rhs` for symmetric positive definite `M`.
pub fn solve_definite(m: &SymMatrix, rhs: &GenMatrix) -> Result<GenMatrix, LinalgError> {
    Cholesky::factor(m)?.solve(rhs)
}
