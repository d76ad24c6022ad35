//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Points, tangent vectors and dual vectors all live in `R^n`.
pub type Point = DVector<f64>;

/// Relative singular-value floor used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Solve `g y = r` for symmetric positive definite `g`.
pub fn spd_solve(g: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    if g.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let chol = g.clone().cholesky().ok_or(Error::RankDeficient)?;
    Ok(chol.solve(r))
}

/// `true` when the smallest singular value is above `RANK_TOL` times the largest.
pub fn full_row_rank(a: &DMatrix<f64>) -> bool {
    if a.nrows() == 0 {
        return true;
    }
    if a.nrows() > a.ncols() {
        return false;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > RANK_TOL * max
}

/// Minimum-norm least-squares solution of `a z ≈ rhs`.
pub fn lstsq(a: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = (max * 1e-13).max(f64::MIN_POSITIVE);
    svd.solve(rhs, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

/// Side length `d` of a symmetric matrix whose scaled upper triangle has `len` entries.
pub fn tri_side(len: usize) -> Option<usize> {
    let mut d = 0;
    while d * (d + 1) / 2 < len {
        d += 1;
    }
    (d * (d + 1) / 2 == len && d > 0).then_some(d)
}

/// Scaled upper-triangle embedding: off-diagonal entries carry a factor `sqrt 2`,
/// so the Euclidean inner product of two embeddings is the Frobenius product.
/// Row-major order `(0,0), (0,1), .., (0,d-1), (1,1), ..`.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = DVector::zeros(d * (d + 1) / 2);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            out[k] = if i == j {
                m[(i, j)]
            } else {
                core::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            k += 1;
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = tri_side(v.len()).ok_or(Error::DimensionMismatch {
        expected: v.len().max(1),
        found: v.len(),
    })?;
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let off = v[k] / core::f64::consts::SQRT_2;
                m[(i, j)] = off;
                m[(j, i)] = off;
            }
            k += 1;
        }
    }
    Ok(m)
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix.
pub fn psd_pinv(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = g.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let floor = (max * 1e-12).max(f64::MIN_POSITIVE);
    let inv = eig.eigenvalues.map(|l| if l > floor { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Orthonormal basis (as columns) of the null space of `b`.
pub fn null_space(b: &DMatrix<f64>, cols: usize) -> DMatrix<f64> {
    if b.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    let gram = b.transpose() * b;
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = (max * 1e-12).max(f64::MIN_POSITIVE);
    let keep: alloc::vec::Vec<usize> = (0..cols).filter(|&i| eig.eigenvalues[i] <= floor).collect();
    eig.eigenvectors.select_columns(keep.iter())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_preserves_frobenius_product() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -1.0, 0.5, 3.0, 0.25, -1.0, 0.25, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -0.3, 0.7, -0.3, 0.5, 2.0, 0.7, 2.0, -1.5]);
        let frob = (a.transpose() * &b).trace();
        assert!((svec(&a).dot(&svec(&b)) - frob).abs() < 1e-14);
        assert_eq!(smat(&svec(&a)).unwrap(), a);
    }

    #[test]
    fn tri_side_rejects_non_triangular_lengths() {
        assert_eq!(tri_side(6), Some(3));
        assert_eq!(tri_side(1), Some(1));
        assert_eq!(tri_side(4), None);
        assert_eq!(tri_side(0), None);
    }

    #[test]
    fn rank_checks() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, 2.0, 3.0]);
        assert!(full_row_rank(&a));
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(!full_row_rank(&b));
        assert!(full_row_rank(&DMatrix::zeros(0, 4)));
    }
}
