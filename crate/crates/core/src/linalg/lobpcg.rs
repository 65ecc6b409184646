//! Block LOBPCG for the smallest eigenpair of a symmetric PSD operator,
//! with the constant mode deflated. Used by the Garding solve above the
//! dense-path size threshold.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::{axpy, dot, norm2, remove_mean};

fn orthonormalize(vs: &mut Vec<Vec<f64>>) {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for mut v in vs.drain(..) {
        for q in &kept {
            let c = dot(q, &v);
            axpy(-c, q, &mut v);
        }
        // second pass for stability
        for q in &kept {
            let c = dot(q, &v);
            axpy(-c, q, &mut v);
        }
        let nrm = norm2(&v);
        if nrm > 1e-10 {
            v.iter_mut().for_each(|x| *x /= nrm);
            kept.push(v);
        }
    }
    *vs = kept;
}

/// Returns (theta_min, eigenvector, iterations). `apply` must be symmetric
/// PSD with constants in its kernel; tolerance is relative to the Ritz value
/// plus an operator-scale estimate.
pub fn smallest_eigenpair<F>(
    apply: &F,
    n: usize,
    block: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>, usize)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let block = block.max(2).min(n.saturating_sub(1).max(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Vec<f64>> = (0..block)
        .map(|_| {
            let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            remove_mean(&mut v);
            v
        })
        .collect();
    orthonormalize(&mut x);
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut buf = vec![0.0; n];

    // crude operator-scale estimate for the relative residual test
    let mut scale_est = 0.0f64;
    for v in &x {
        apply(v, &mut buf);
        scale_est = scale_est.max(norm2(&buf));
    }

    for it in 0..max_iter {
        // residuals of current Ritz approximations
        let mut ax: Vec<Vec<f64>> = Vec::with_capacity(x.len());
        for v in &x {
            apply(v, &mut buf);
            ax.push(buf.clone());
        }
        let thetas: Vec<f64> = x.iter().zip(&ax).map(|(v, av)| dot(v, av)).collect();
        // order by theta so entry 0 is the current best
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| thetas[a].total_cmp(&thetas[b]));
        let best = order[0];
        let mut r0 = ax[best].clone();
        axpy(-thetas[best], &x[best], &mut r0);
        let res = norm2(&r0);
        if res <= tol * (thetas[best].abs() + scale_est) {
            return Ok((thetas[best], x[best].clone(), it));
        }

        let mut w: Vec<Vec<f64>> = Vec::with_capacity(x.len());
        for (v, av) in x.iter().zip(&ax) {
            let theta = dot(v, av);
            let mut r = av.clone();
            axpy(-theta, v, &mut r);
            remove_mean(&mut r);
            w.push(r);
        }

        // Rayleigh-Ritz over span[x, w, p]
        let mut basis: Vec<Vec<f64>> = Vec::new();
        basis.extend(x.iter().cloned());
        basis.extend(w);
        basis.extend(p.iter().cloned());
        orthonormalize(&mut basis);
        if basis.is_empty() {
            break;
        }
        let m = basis.len();
        let mut abasis: Vec<Vec<f64>> = Vec::with_capacity(m);
        for v in &basis {
            apply(v, &mut buf);
            abasis.push(buf.clone());
        }
        let g = Mat::from_fn(m, m, |i, j| dot(&basis[i], &abasis[j]));
        let g = faer::Scale(0.5) * (&g + g.transpose());
        let evd = g
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|_| Error::NoConvergence {
                solver: "lobpcg-rr",
                iterations: it,
                residual: res,
            })?;
        let u = evd.U();
        let nb = block.min(m);
        let mut x_new: Vec<Vec<f64>> = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut v = vec![0.0; n];
            for (j, q) in basis.iter().enumerate() {
                axpy(u[(j, k)], q, &mut v);
            }
            remove_mean(&mut v);
            x_new.push(v);
        }
        // implicit p: difference of successive subspaces
        p = x_new
            .iter()
            .zip(x.iter().chain(std::iter::repeat(&x_new[0])))
            .map(|(xn, xo)| {
                let mut d = xn.clone();
                axpy(-dot(xn, xo), xo, &mut d);
                d
            })
            .collect();
        orthonormalize(&mut p);
        p.truncate(block);
        x = x_new;
        orthonormalize(&mut x);
        if x.is_empty() {
            break;
        }
    }
    Err(Error::NoConvergence {
        solver: "lobpcg",
        iterations: max_iter,
        residual: f64::NAN,
    })
}
