//! Dense Hermitian eigen / SVD helpers on raw complex matrices.
//!
//! All thresholds are relative to the largest singular value (or largest
//! eigenvalue magnitude) unless stated otherwise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::{CMatrix, C64};

/// Hermitian part `(a + a†) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Eigen-decomposition of the Hermitian part of `a`, eigenvalues ascending.
pub fn eigh(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn eigvalsh(a: &CMatrix) -> Vec<f64> {
    eigh(a).0
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    eigvalsh(a).first().copied().unwrap_or(0.0)
}

/// Rebuild `V diag(f(λ)) V†`.
pub fn spectral_map(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = values.len();
    let mut scaled = vectors.clone();
    for (c, &v) in values.iter().enumerate() {
        let s = C64::new(f(v), 0.0);
        for r in 0..n {
            scaled[(r, c)] *= s;
        }
    }
    scaled * vectors.adjoint()
}

/// PSD square root with eigenvalues clamped at zero.
///
/// Fails with [`Error::NotPsd`] when the smallest eigenvalue lies below `-tol`.
pub fn sqrt_psd_matrix(a: &CMatrix, tol: f64) -> Result<CMatrix> {
    let (values, vectors) = eigh(a);
    if let Some(&min) = values.first() {
        if min < -tol {
            return Err(Error::NotPsd { min_eig: min });
        }
    }
    Ok(spectral_map(&values, &vectors, |v| v.max(0.0).sqrt()))
}

/// Singular values in descending order.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Numerical rank with singular values `<= rel_tol * sigma_max` treated as zero.
pub fn rank(a: &CMatrix, rel_tol: f64) -> usize {
    let s = singular_values(a);
    count_above(&s, rel_tol)
}

pub(crate) fn count_above(descending: &[f64], rel_tol: f64) -> usize {
    match descending.first() {
        Some(&max) if max > 0.0 => descending.iter().filter(|&&v| v > rel_tol * max).count(),
        _ => 0,
    }
}

/// Moore-Penrose pseudoinverse and rank.
pub fn pinv(a: &CMatrix, rel_tol: f64) -> (usize, CMatrix) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (0, CMatrix::zeros(n, m));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = &svd.singular_values;
    let max = s.iter().copied().fold(0.0, f64::max);
    let k = s.len();
    let mut rank = 0;
    let mut inv_s = DVector::<C64>::zeros(k);
    for i in 0..k {
        if max > 0.0 && s[i] > rel_tol * max {
            inv_s[i] = C64::new(1.0 / s[i], 0.0);
            rank += 1;
        }
    }
    // pinv = V diag(1/s) U†
    let mut v = v_t.adjoint();
    for c in 0..k {
        for r in 0..n {
            v[(r, c)] *= inv_s[c];
        }
    }
    (rank, v * u.adjoint())
}

/// Pseudoinverse of a Hermitian PSD matrix via its eigen-decomposition.
pub fn pinv_hermitian(a: &CMatrix, rel_tol: f64) -> (usize, CMatrix, Vec<f64>) {
    let (values, vectors) = eigh(a);
    let max = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let thresh = rel_tol * max;
    let rank = values.iter().filter(|v| v.abs() > thresh).count();
    let inv = spectral_map(&values, &vectors, |v| if v.abs() > thresh { 1.0 / v } else { 0.0 });
    (rank, inv, values)
}

/// Largest singular value.
pub fn operator_norm(a: &CMatrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Sum of singular values.
pub fn trace_norm(a: &CMatrix) -> f64 {
    singular_values(a).iter().sum()
}

/// Largest entry magnitude.
pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Deviation `max |U†U - I|` used for unitarity checks.
pub fn unitarity_deviation(u: &CMatrix) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    let n = u.nrows();
    max_abs(&(u.adjoint() * u - CMatrix::identity(n, n)))
}

/// Kronecker product of raw matrices.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Real diagonal matrix helper.
pub fn diag_real(values: &[f64]) -> CMatrix {
    DMatrix::from_fn(values.len(), values.len(), |r, c| {
        if r == c {
            C64::new(values[r], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}
