//! Dense small-dimension linear algebra on top of `nalgebra` storage.
//!
//! Scatter matrices are held as [`SpdMatrix`], which caches the lower Cholesky
//! factor and the log-determinant. Determinants are only ever handled in log
//! space.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative pivot threshold: a pivot at or below `PD_TOLERANCE * max(diag)` is singular.
pub const PD_TOLERANCE: f64 = 1e-10;

/// Relative asymmetry accepted by [`cholesky`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (pivot {index} = {pivot:e}, tolerance {tolerance:e})")]
    NotPositiveDefinite { index: usize, pivot: f64, tolerance: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// A symmetric positive-definite matrix with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: Matrix,
    chol: Matrix,
    log_det: f64,
}

/// Factor a symmetric matrix as `L·Lᵀ`.
///
/// Only the lower triangle is read once symmetry has been checked.
pub fn cholesky(m: &Matrix) -> Result<SpdMatrix> {
    let (rows, cols) = m.shape();
    if rows != cols || rows == 0 {
        return Err(NumericsError::NotSquare { rows, cols });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let p = rows;
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut asymmetry = 0.0f64;
    for i in 0..p {
        for j in 0..i {
            asymmetry = asymmetry.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asymmetry > SYMMETRY_TOLERANCE * scale {
        return Err(NumericsError::NotSymmetric { asymmetry });
    }

    let max_diag = (0..p).fold(0.0f64, |acc, i| acc.max(m[(i, i)]));
    let tolerance = PD_TOLERANCE * max_diag;
    let mut l = Matrix::zeros(p, p);
    let mut log_det = 0.0;
    for j in 0..p {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tolerance) {
            return Err(NumericsError::NotPositiveDefinite {
                index: j,
                pivot,
                tolerance,
            });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        log_det += 2.0 * d.ln();
        for i in (j + 1)..p {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }

    // Store the symmetrized matrix so downstream consumers see exact symmetry.
    let mut matrix = m.clone();
    for i in 0..p {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            matrix[(i, j)] = avg;
            matrix[(j, i)] = avg;
        }
    }
    Ok(SpdMatrix {
        matrix,
        chol: l,
        log_det,
    })
}

/// Squared Mahalanobis distance `(x-μ)' Σ⁻¹ (x-μ)`.
pub fn mahalanobis_sq(x: &[f64], center: &[f64], scatter: &SpdMatrix) -> Result<f64> {
    let p = scatter.dim();
    if x.len() != p {
        return Err(NumericsError::DimensionMismatch {
            expected: p,
            found: x.len(),
        });
    }
    if center.len() != p {
        return Err(NumericsError::DimensionMismatch {
            expected: p,
            found: center.len(),
        });
    }
    let mut buf = vec![0.0; p];
    Ok(scatter.mahalanobis_sq_unchecked(x.iter().copied(), center, &mut buf))
}

impl SpdMatrix {
    pub fn new(m: &Matrix) -> Result<Self> {
        cholesky(m)
    }

    pub fn identity(p: usize) -> Self {
        SpdMatrix {
            matrix: Matrix::identity(p, p),
            chol: Matrix::identity(p, p),
            log_det: 0.0,
        }
    }

    /// Factor `m + ε·(tr(m)/p)·I`. Callers opt into this after a
    /// [`NumericsError::NotPositiveDefinite`]; it is never applied implicitly.
    pub fn with_ridge(m: &Matrix, eps: f64) -> Result<Self> {
        let p = m.nrows();
        let bump = eps * m.trace() / p as f64;
        let mut r = m.clone();
        for i in 0..p {
            r[(i, i)] += bump;
        }
        cholesky(&r)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Lower-triangular Cholesky factor.
    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `factor · Σ` without refactoring. `factor` must be positive.
    pub fn scaled(&self, factor: f64) -> SpdMatrix {
        debug_assert!(factor > 0.0);
        let p = self.dim() as f64;
        SpdMatrix {
            matrix: &self.matrix * factor,
            chol: &self.chol * factor.sqrt(),
            log_det: self.log_det + p * factor.ln(),
        }
    }

    /// Rescale to unit determinant.
    pub fn normalized_shape(&self) -> SpdMatrix {
        let p = self.dim() as f64;
        self.scaled((-self.log_det / p).exp())
    }

    pub fn inverse(&self) -> Matrix {
        let p = self.dim();
        let mut inv = Matrix::identity(p, p);
        self.chol.solve_lower_triangular_mut(&mut inv);
        self.chol.tr_solve_lower_triangular_mut(&mut inv);
        inv
    }

    /// Mahalanobis distance for a point given as an iterator; `buf` must have length `p`.
    #[inline]
    pub(crate) fn mahalanobis_sq_unchecked(
        &self,
        x: impl Iterator<Item = f64>,
        center: &[f64],
        buf: &mut [f64],
    ) -> f64 {
        for ((b, xi), ci) in buf.iter_mut().zip(x).zip(center) {
            *b = xi - ci;
        }
        let p = buf.len();
        let mut acc = 0.0;
        for i in 0..p {
            let mut s = buf[i];
            for k in 0..i {
                s -= self.chol[(i, k)] * buf[k];
            }
            let y = s / self.chol[(i, i)];
            buf[i] = y;
            acc += y * y;
        }
        acc
    }

    /// Squared distances of every row of `data` (n×p) from `center`.
    pub fn distances_sq(&self, data: &Matrix, center: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(data.nrows());
        self.distances_sq_into(data, center, &mut out);
        out
    }

    pub(crate) fn distances_sq_into(&self, data: &Matrix, center: &[f64], out: &mut Vec<f64>) {
        assert_eq!(data.ncols(), self.dim());
        assert_eq!(center.len(), self.dim());
        out.clear();
        let mut buf = vec![0.0; self.dim()];
        for row in data.row_iter() {
            out.push(self.mahalanobis_sq_unchecked(row.iter().copied(), center, &mut buf));
        }
    }
}

/// Mean vector and scatter (divisor `n`, or `n-1` when `unbiased`) of the given rows.
pub fn mean_and_scatter(data: &Matrix, rows: Option<&[usize]>, unbiased: bool) -> (Vector, Matrix) {
    let p = data.ncols();
    let idx: Vec<usize> = match rows {
        Some(r) => r.to_vec(),
        None => (0..data.nrows()).collect(),
    };
    let n = idx.len();
    let mut mean = Vector::zeros(p);
    for &i in &idx {
        for j in 0..p {
            mean[j] += data[(i, j)];
        }
    }
    mean /= n as f64;
    let mut s = Matrix::zeros(p, p);
    let mut d = vec![0.0; p];
    for &i in &idx {
        for j in 0..p {
            d[j] = data[(i, j)] - mean[j];
        }
        for a in 0..p {
            for b in 0..=a {
                s[(a, b)] += d[a] * d[b];
            }
        }
    }
    let divisor = if unbiased { (n - 1) as f64 } else { n as f64 };
    symmetrize_lower(&mut s, divisor);
    (mean, s)
}

/// Weighted mean and weighted scatter `Σ wᵢ (xᵢ-m)(xᵢ-m)ᵀ / divisor`.
/// With `divisor = None` the weight total is used.
pub fn weighted_mean_and_scatter(data: &Matrix, weights: &[f64], divisor: Option<f64>) -> (Vector, Matrix) {
    let p = data.ncols();
    let total: f64 = weights.iter().sum();
    let mut mean = Vector::zeros(p);
    for (i, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            for j in 0..p {
                mean[j] += w * data[(i, j)];
            }
        }
    }
    mean /= total;
    let s = weighted_scatter_about(data, weights, mean.as_slice(), divisor.unwrap_or(total));
    (mean, s)
}

pub(crate) fn weighted_scatter_about(data: &Matrix, weights: &[f64], center: &[f64], divisor: f64) -> Matrix {
    let p = data.ncols();
    let mut s = Matrix::zeros(p, p);
    let mut d = vec![0.0; p];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for j in 0..p {
            d[j] = data[(i, j)] - center[j];
        }
        for a in 0..p {
            let wa = w * d[a];
            for b in 0..=a {
                s[(a, b)] += wa * d[b];
            }
        }
    }
    symmetrize_lower(&mut s, divisor);
    s
}

fn symmetrize_lower(s: &mut Matrix, divisor: f64) {
    let p = s.nrows();
    for a in 0..p {
        for b in 0..=a {
            let v = s[(a, b)] / divisor;
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
}
