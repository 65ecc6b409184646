//! Conjugate gradients for symmetric positive-definite operator applications.

use crate::error::{Error, Result};

use super::{axpy, dot, norm2};

/// Solves A u = b for SPD `A` given as a matrix-free application,
/// to relative residual `tol`. Returns (solution, iterations).
pub fn solve_spd<F>(apply: F, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= tol * b_norm {
            return Ok((x, it));
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence {
                solver: "cg",
                iterations: it,
                residual: rr.sqrt() / b_norm,
            });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= tol * b_norm {
        return Ok((x, max_iter));
    }
    Err(Error::NoConvergence {
        solver: "cg",
        iterations: max_iter,
        residual: rr.sqrt() / b_norm,
    })
}
