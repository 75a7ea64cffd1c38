//! Symmetric Hessian matrices assembled by polarization, their spectra, and
//! negative-eigenvalue counts.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::par;

/// Default relative eigenvalue tolerance: `1e−3 · max|λ|`.
pub const DEFAULT_TOL_EIG: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexReport {
    pub basis: Vec<String>,
    /// Rows of the symmetric Hessian.
    pub hessian: Vec<Vec<f64>>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub negative_count: usize,
    /// Absolute tolerance actually applied.
    pub tol_eig: f64,
}

impl IndexReport {
    pub fn size(&self) -> usize {
        self.basis.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size()).map(|i| self.hessian[i][i]).collect()
    }
}

/// `H_ab = ½(Q(w_a + w_b) − Q(w_a) − Q(w_b))`, with `q(a, None) = Q(w_a)` and
/// `q(a, Some(b)) = Q(w_a + w_b)`.
pub fn polarize<F>(k: usize, q: F) -> DMatrix<f64>
where
    F: Fn(usize, Option<usize>) -> f64 + Sync + Send,
{
    let diag = par::map_indexed(k, |a| q(a, None));
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| ((a + 1)..k).map(move |b| (a, b))).collect();
    let sums = par::map_slice(&pairs, |&(a, b)| q(a, Some(b)));
    let mut h = DMatrix::zeros(k, k);
    for a in 0..k {
        h[(a, a)] = diag[a];
    }
    for (&(a, b), s) in pairs.iter().zip(sums) {
        let v = 0.5 * (s - diag[a] - diag[b]);
        h[(a, b)] = v;
        h[(b, a)] = v;
    }
    h
}

/// Spectrum and negative count at tolerance `tol_rel · max|λ|`.
pub fn index_from_matrix(basis: Vec<String>, h: DMatrix<f64>, tol_rel: f64) -> IndexReport {
    let k = h.nrows();
    let hessian = (0..k).map(|i| (0..k).map(|j| h[(i, j)]).collect()).collect();
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let max_abs = eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let tol_eig = tol_rel * max_abs;
    let negative_count = eigenvalues.iter().filter(|&&l| l < -tol_eig).count();
    IndexReport {
        basis,
        hessian,
        eigenvalues,
        negative_count,
        tol_eig,
    }
}
