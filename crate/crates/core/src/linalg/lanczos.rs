//! Restarted Lanczos evaluation of e^{-t A} v for symmetric PSD operators,
//! with step-doubling error control. This is the semigroup path for problems
//! too large for the dense exponential.

use faer::Mat;

use crate::error::{Error, Result};

use super::expm::expm;
use super::{axpy, dot, norm2};

struct LanczosStep {
    out: Vec<f64>,
    happy: bool,
}

/// One Krylov approximation of e^{-tau A} w with subspace dimension up to
/// `max_dim`, full reorthogonalization.
fn lanczos_apply<F>(apply: &F, w: &[f64], tau: f64, max_dim: usize) -> LanczosStep
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = w.len();
    let beta0 = norm2(w);
    if beta0 == 0.0 {
        return LanczosStep {
            out: vec![0.0; n],
            happy: true,
        };
    }
    let m_cap = max_dim.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m_cap);
    let mut alphas: Vec<f64> = Vec::with_capacity(m_cap);
    let mut betas: Vec<f64> = Vec::with_capacity(m_cap);
    basis.push(w.iter().map(|x| x / beta0).collect());
    let mut happy = false;
    let mut av = vec![0.0; n];
    for j in 0..m_cap {
        apply(&basis[j], &mut av);
        let alpha = dot(&basis[j], &av);
        alphas.push(alpha);
        axpy(-alpha, &basis[j], &mut av);
        if j > 0 {
            let b = betas[j - 1];
            axpy(-b, &basis[j - 1], &mut av);
        }
        // full reorthogonalization keeps the small problem faithful
        for q in &basis {
            let c = dot(q, &av);
            axpy(-c, q, &mut av);
        }
        let beta = norm2(&av);
        if beta <= 1e-14 * beta0 || j + 1 == m_cap {
            if beta <= 1e-14 * beta0 {
                happy = true;
            }
            break;
        }
        betas.push(beta);
        basis.push(av.iter().map(|x| x / beta).collect());
    }
    let m = alphas.len();
    let t_small = Mat::from_fn(m, m, |i, j| {
        if i == j {
            -tau * alphas[i]
        } else if j + 1 == i || i + 1 == j {
            -tau * betas[i.min(j)]
        } else {
            0.0
        }
    });
    let e = expm(&t_small);
    let mut out = vec![0.0; n];
    for (j, q) in basis.iter().enumerate() {
        axpy(beta0 * e[(j, 0)], q, &mut out);
    }
    LanczosStep { out, happy }
}

/// e^{-t A} v to relative accuracy ~`tol`, via restarted Lanczos with
/// adaptive substeps (step-doubling local error estimate).
pub fn expm_multiply<F>(apply: &F, t: f64, v: &[f64], tol: f64, max_dim: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    if t == 0.0 {
        return Ok(v.to_vec());
    }
    let scale = norm2(v);
    if scale == 0.0 {
        return Ok(v.to_vec());
    }
    let mut current = v.to_vec();
    let mut remaining = t;
    let mut tau = t;
    let mut halvings = 0usize;
    let mut steps = 0usize;
    while remaining > 0.0 {
        tau = tau.min(remaining);
        let full = lanczos_apply(apply, &current, tau, max_dim);
        if full.happy {
            current = full.out;
            remaining -= tau;
            steps += 1;
            continue;
        }
        let half1 = lanczos_apply(apply, &current, 0.5 * tau, max_dim);
        let half2 = lanczos_apply(apply, &half1.out, 0.5 * tau, max_dim);
        let err = full
            .out
            .iter()
            .zip(&half2.out)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let budget = tol * scale * (tau / t).max(1e-3);
        if err <= budget {
            current = half2.out;
            remaining -= tau;
            steps += 1;
            if err < 0.1 * budget {
                tau *= 2.0;
            }
        } else {
            tau *= 0.5;
            halvings += 1;
            if halvings > 80 {
                return Err(Error::NoConvergence {
                    solver: "lanczos-expm",
                    iterations: steps,
                    residual: err / scale,
                });
            }
        }
    }
    Ok(current)
}
