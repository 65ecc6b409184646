//! Shared oracles for the acceptance suite, implemented over an independent
//! linear-algebra route (nalgebra: Householder deflation, Cholesky
//! congruence, symmetric QR) from the library's faer/FFT path.

use nalgebra::{DMatrix, DVector};

use ellikernel::operators::SparseOperator;

/// Brute-force smallest generalized eigenvalue of (H, Delta) on the
/// mean-zero subspace.
pub fn garding_dense_oracle(h: &SparseOperator, delta: &SparseOperator) -> f64 {
    let n = h.n();
    let hd = DMatrix::<f64>::from_fn(n, n, |i, j| h.entry(i, j));
    let dd = DMatrix::<f64>::from_fn(n, n, |i, j| delta.entry(i, j));
    // Householder reflector sending e_1 to the normalized constant vector;
    // its remaining columns span the mean-zero subspace
    let ones = DVector::<f64>::from_element(n, 1.0 / (n as f64).sqrt());
    let mut v = ones.clone();
    v[0] += 1.0;
    let v = v.normalize();
    let reflect = DMatrix::<f64>::identity(n, n) - &v * v.transpose() * 2.0;
    let q = reflect.columns(1, n - 1).into_owned();
    let a = q.transpose() * &hd * &q;
    let b = q.transpose() * &dd * &q;
    let chol = b.cholesky().expect("deflated Laplacian is SPD");
    let linv_a = chol.l().solve_lower_triangular(&a).unwrap();
    let s = chol
        .l()
        .solve_lower_triangular(&linv_a.transpose())
        .unwrap();
    let sym = (s.clone() + s.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
