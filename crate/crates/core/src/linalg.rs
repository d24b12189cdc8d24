//! Symmetric-matrix helpers: symmetrization, PSD checks and repair, and a
//! Cholesky factorization that jitters its way past near-singularity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for "PSD within rounding": smallest eigenvalue must
/// be at least `-PSD_TOL * trace`.
pub const PSD_TOL: f64 = 1e-10;

/// Mean vector and covariance matrix of a random vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::dim(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite moments".into()));
        }
        Ok(Self { mean, cov })
    }

    /// Mean zero and covariance `var * I`.
    pub fn diffuse(dim: usize, var: f64) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim) * var,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// In-place `(A + A') / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn trace(a: &DMatrix<f64>) -> f64 {
    a.diagonal().iter().sum()
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// True when a symmetric matrix is PSD up to `PSD_TOL * trace`. Uses an
/// attempted Cholesky of the shifted matrix, so it costs O(n^3 / 6).
pub fn is_psd_within_tol(a: &DMatrix<f64>) -> bool {
    let mut scratch = Vec::new();
    psd_within_tol_slice(a.as_slice(), a.nrows(), &mut scratch)
}

/// Slice form of [`is_psd_within_tol`] for a column-major `n x n` matrix,
/// reusing `scratch` to avoid allocation on hot paths.
pub fn psd_within_tol_slice(a: &[f64], n: usize, scratch: &mut Vec<f64>) -> bool {
    let tr: f64 = (0..n).map(|i| a[i + i * n]).sum();
    let shift = PSD_TOL * tr.abs().max(f64::MIN_POSITIVE);
    scratch.clear();
    scratch.extend_from_slice(a);
    let l = scratch;
    for j in 0..n {
        let mut d = l[j + j * n] + shift;
        for k in 0..j {
            d -= l[j + k * n] * l[j + k * n];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[j + j * n] = d;
        for i in (j + 1)..n {
            let mut s = l[i + j * n];
            for k in 0..j {
                s -= l[i + k * n] * l[j + k * n];
            }
            l[i + j * n] = s / d;
        }
    }
    true
}

/// Clip negative eigenvalues to zero and rebuild.
pub fn clip_eigenvalues(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&vals) * v.transpose();
    symmetrize(&mut out);
    out
}

/// Symmetrize, then clip eigenvalues if the matrix is not PSD within
/// tolerance. Returns whether clipping happened.
pub fn psd_repair(a: &mut DMatrix<f64>) -> bool {
    symmetrize(a);
    if is_psd_within_tol(a) {
        return false;
    }
    *a = clip_eigenvalues(a);
    true
}

/// Lower Cholesky factor of a symmetric matrix, repairing it if needed: the
/// plain factorization is tried first, then eigenvalue clipping with a
/// diagonal jitter of `1e-10 * trace`, escalated tenfold a few times.
pub fn robust_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut s = a.clone();
    symmetrize(&mut s);
    if let Some(c) = s.clone().cholesky() {
        return Ok(c.l());
    }
    let clipped = clip_eigenvalues(&s);
    if clipped.iter().all(|v| *v == 0.0) {
        return Ok(clipped);
    }
    let tr = trace(&clipped).abs().max(f64::MIN_POSITIVE);
    let mut jitter = PSD_TOL * tr;
    for _ in 0..6 {
        let mut j = clipped.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += jitter;
        }
        if let Some(c) = j.cholesky() {
            return Ok(c.l());
        }
        jitter *= 10.0;
    }
    Err(Error::Cholesky)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetrize_averages() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        symmetrize(&mut a);
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 3.0]));
    }

    #[test]
    fn psd_check_and_repair() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(!is_psd_within_tol(&a));
        assert!(psd_repair(&mut a));
        assert!(min_eigenvalue(&a) > -1e-12);
        // singular but PSD passes untouched
        let mut b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let before = b.clone();
        assert!(!psd_repair(&mut b));
        assert_eq!(b, before);
    }

    #[test]
    fn cholesky_of_singular_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let l = robust_cholesky(&a).unwrap();
        let back = &l * l.transpose();
        assert!((back - a).abs().max() < 1e-8);
    }

    proptest! {
        #[test]
        fn repaired_matrices_are_psd(v in proptest::collection::vec(-3.0f64..3.0, 16)) {
            let mut a = DMatrix::from_row_slice(4, 4, &v);
            psd_repair(&mut a);
            prop_assert!(a == a.transpose());
            let tr = trace(&a).abs().max(1e-300);
            prop_assert!(min_eigenvalue(&a) >= -1e-9 * tr);
            prop_assert!(robust_cholesky(&a).is_ok());
        }
    }
}
