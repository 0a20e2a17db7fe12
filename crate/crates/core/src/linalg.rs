//! Thin helpers over `nalgebra` dense matrices.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

fn norm_one(m: &Matrix) -> f64 {
    (0..m.ncols()).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Inverse with a 1-norm condition estimate; fails on (near) singularity.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    let singular = |condition| Error::SingularInformation { condition };
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(singular(f64::INFINITY));
    }
    let inv = m.clone().lu().try_inverse().ok_or(singular(f64::INFINITY))?;
    let condition = norm_one(m) * norm_one(&inv);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(singular(condition));
    }
    Ok(inv)
}

pub fn solve(m: &Matrix, b: &Vector) -> Result<Vector> {
    Ok(inverse(m)? * b)
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut values: Vec<f64> = symmetrize(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    values
}

/// Symmetric square root of a positive definite matrix.
pub fn sqrt_spd(m: &Matrix) -> Result<Matrix> {
    let eig = symmetrize(m).symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if eig.eigenvalues.iter().any(|&l| l <= max * 1e-14 || !l.is_finite()) {
        return Err(Error::InvalidInput("matrix is not positive definite".into()));
    }
    let roots = Matrix::from_diagonal(&eig.eigenvalues.map(libm::sqrt));
    Ok(&eig.eigenvectors * roots * eig.eigenvectors.transpose())
}

/// Sample covariance (divisor `k`) of the rows of `rows` (each a vector of length `d`).
pub fn covariance(rows: &[Vec<f64>], d: usize) -> Matrix {
    let k = rows.len().max(1) as f64;
    let mut mean = Vector::zeros(d);
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    mean /= k;
    let mut cov = Matrix::zeros(d, d);
    for r in rows {
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in 0..d {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    cov / k
}

/// Rows/columns of `m` selected by `idx`.
pub fn submatrix(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn subvector(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_fn(idx.len(), |i, _| v[idx[i]])
}
