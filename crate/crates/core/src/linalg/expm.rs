//! Dense matrix exponential by Pade approximation with scaling and squaring
//! (Higham 2005 degree selection).

use faer::prelude::Solve;
use faer::Mat;

const THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
];

fn pade_coeffs(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[
            17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
        ],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        13 => &[
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ],
        _ => unreachable!(),
    }
}

fn norm_1(a: &Mat<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let mut acc = 0.0;
        for i in 0..a.nrows() {
            acc += a[(i, j)].abs();
        }
        best = best.max(acc);
    }
    best
}

fn eye(n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Deep semigroup tails reach subnormal range, and products of two such
/// entries inside gemm stall the FPU by an order of magnitude. Entries below
/// 1e-150 are flushed to zero between squarings so no product of survivors
/// can underflow; the cutoff sits ~140 decades below every tolerance in use.
fn flush_tiny(m: &mut Mat<f64>) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)].abs() < 1e-150 {
                m[(i, j)] = 0.0;
            }
        }
    }
}

fn add_scaled_identity(m: &mut Mat<f64>, c: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += c;
    }
}

/// exp(A) for a square matrix.
pub fn expm(a: &Mat<f64>) -> Mat<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let norm = norm_1(a);

    // degree selection without scaling when the norm is small enough
    for &(m, theta) in &THETA[..4] {
        if norm <= theta {
            return pade(a, m);
        }
    }
    let theta13 = THETA[4].1;
    let mut s = 0u32;
    if norm > theta13 {
        s = (norm / theta13).log2().ceil() as u32;
    }
    let scaled = Mat::from_fn(n, n, |i, j| a[(i, j)] / 2f64.powi(s as i32));
    let mut f = pade(&scaled, 13);
    for _ in 0..s {
        flush_tiny(&mut f);
        f = &f * &f;
    }
    flush_tiny(&mut f);
    f
}

fn pade(a: &Mat<f64>, m: usize) -> Mat<f64> {
    let n = a.nrows();
    let b = pade_coeffs(m);
    let a2 = a * a;
    let (mut u_poly, mut v) = match m {
        3 | 5 | 7 | 9 => {
            // powers a2, a4, a6, a8 as needed
            let mut pows: Vec<Mat<f64>> = vec![a2.clone()];
            while pows.len() < (m - 1) / 2 {
                let next = pows.last().unwrap() * &a2;
                pows.push(next);
            }
            let mut u = Mat::<f64>::zeros(n, n);
            let mut v = Mat::<f64>::zeros(n, n);
            for (k, p) in pows.iter().enumerate() {
                let deg = 2 * (k + 1);
                u += faer::Scale(b[deg + 1]) * p;
                v += faer::Scale(b[deg]) * p;
            }
            add_scaled_identity(&mut u, b[1]);
            add_scaled_identity(&mut v, b[0]);
            (u, v)
        }
        13 => {
            let a4 = &a2 * &a2;
            let a6 = &a2 * &a4;
            let u_hi = faer::Scale(b[13]) * &a6 + faer::Scale(b[11]) * &a4 + faer::Scale(b[9]) * &a2;
            let mut u = &a6 * &u_hi
                + faer::Scale(b[7]) * &a6
                + faer::Scale(b[5]) * &a4
                + faer::Scale(b[3]) * &a2;
            add_scaled_identity(&mut u, b[1]);
            let v_hi = faer::Scale(b[12]) * &a6 + faer::Scale(b[10]) * &a4 + faer::Scale(b[8]) * &a2;
            let mut v = &a6 * &v_hi
                + faer::Scale(b[6]) * &a6
                + faer::Scale(b[4]) * &a4
                + faer::Scale(b[2]) * &a2;
            add_scaled_identity(&mut v, b[0]);
            (u, v)
        }
        _ => unreachable!(),
    };
    u_poly = a * &u_poly;
    let p = &v + &u_poly;
    let q = &v - &u_poly;
    v = q.partial_piv_lu().solve(&p);
    v
}

/// exp(A) applied entrywise-exactly to the zero matrix is the identity; used
/// as a cheap self-check in debug builds.
#[allow(dead_code)]
pub fn expm_is_identity_for_zero(n: usize) -> bool {
    let z = Mat::<f64>::zeros(n, n);
    let e = expm(&z);
    let id = eye(n);
    (0..n).all(|i| (0..n).all(|j| e[(i, j)] == id[(i, j)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_gives_exact_identity() {
        assert!(expm_is_identity_for_zero(6));
    }

    #[test]
    fn diagonal_matrix_exponentiates_entrywise() {
        let d = [0.0, -1.0, -10.0, 2.5];
        let a = Mat::from_fn(4, 4, |i, j| if i == j { d[i] } else { 0.0 });
        let e = expm(&a);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { d[i].exp() } else { 0.0 };
                assert!(
                    (e[(i, j)] - want).abs() <= 1e-14 * want.abs().max(1.0),
                    "({i},{j}): {} vs {}",
                    e[(i, j)],
                    want
                );
            }
        }
    }

    #[test]
    fn matches_eigendecomposition_on_random_symmetric() {
        // independent route: nalgebra symmetric eigendecomposition
        use nalgebra::DMatrix;
        let n = 24;
        let raw = DMatrix::<f64>::from_fn(n, n, |i, j| ((i * 31 + j * 17) % 23) as f64 / 23.0 - 0.4);
        let sym = (&raw + raw.transpose()) * 4.0;
        let se = sym.clone().symmetric_eigen();
        let mut want = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let v = se.eigenvectors.column(k);
            want += v * v.transpose() * se.eigenvalues[k].exp();
        }
        let a = Mat::from_fn(n, n, |i, j| sym[(i, j)]);
        let e = expm(&a);
        let scale = want.amax();
        for i in 0..n {
            for j in 0..n {
                assert!(
                    (e[(i, j)] - want[(i, j)]).abs() <= 1e-11 * scale,
                    "entry ({i},{j}) differs"
                );
            }
        }
    }
}
