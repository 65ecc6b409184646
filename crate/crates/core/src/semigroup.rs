//! Viscosity regularization H_eps = H + eps * Delta, resolvents, semigroups
//! e^{-tH}, and kernel matrices K_t with their diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{self, cg, expm, lanczos};
use crate::operators::{OperatorTag, SparseOperator};

/// Strictly decreasing viscosity parameters in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    values: Vec<f64>,
}

impl EpsSchedule {
    pub fn new(values: Vec<f64>) -> Result<EpsSchedule> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("eps schedule is empty".into()));
        }
        for w in values.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::InvalidArgument(
                    "eps schedule must be strictly decreasing".into(),
                ));
            }
        }
        if values.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(Error::InvalidArgument(
                "eps values must lie in (0, 1]".into(),
            ));
        }
        Ok(EpsSchedule { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for EpsSchedule {
    /// {2^0, 2^-1, ..., 2^-12}
    fn default() -> Self {
        EpsSchedule {
            values: (0..=12).map(|k| 2.0_f64.powi(-k)).collect(),
        }
    }
}

/// H + eps * Delta, entrywise; strictly positive-definite on the mean-zero
/// subspace.
pub fn build_h_eps(
    h_op: &SparseOperator,
    delta: &SparseOperator,
    eps: f64,
) -> Result<SparseOperator> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must lie in (0, 1], got {eps}"
        )));
    }
    h_op.add(&delta.scaled(eps, OperatorTag::Delta), OperatorTag::HEps { eps })
}

/// Solves (op + I) u = psi by conjugate gradients to relative residual `tol`.
pub fn resolvent_apply(op: &SparseOperator, psi: &[f64], tol: f64) -> Result<Vec<f64>> {
    if psi.len() != op.n() {
        return Err(Error::ShapeMismatch(format!(
            "resolvent_apply: operator size {} vs vector length {}",
            op.n(),
            psi.len()
        )));
    }
    let apply = |v: &[f64], out: &mut [f64]| {
        op.apply(v, out);
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    };
    let (u, _iters) = cg::solve_spd(apply, psi, tol, 10 * op.n())?;
    Ok(u)
}

/// Diagnostics of the strong-resolvent limit along an eps schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViscosityDiagnostics {
    pub eps: Vec<f64>,
    /// delta_j = ||(H_{eps_j}+I)^{-1} psi - (H_{eps_{j+1}}+I)^{-1} psi||_2
    pub deltas: Vec<f64>,
    /// true when the final delta reached 1e-8 * ||psi||
    pub converged: bool,
    /// ||u(eps_min) - (H+I)^{-1} psi||_2
    pub direct_agreement: f64,
    /// rigorous bound eps_min * ||Delta u_direct|| plus solver slack
    pub agreement_bound: f64,
    /// direct_agreement <= agreement_bound
    pub identity_ok: bool,
    #[serde(skip)]
    pub limit: Vec<f64>,
}

/// Applies (H_eps + I)^{-1} psi along the schedule and checks the Cauchy
/// decay and the finite-grid identity against (H + I)^{-1} psi.
pub fn viscosity_limit(
    h_op: &SparseOperator,
    delta: &SparseOperator,
    schedule: &EpsSchedule,
    psi: &[f64],
    tol: f64,
) -> Result<ViscosityDiagnostics> {
    let psi_norm = linalg::norm2(psi);
    let mut resolvents: Vec<Vec<f64>> = Vec::with_capacity(schedule.values().len());
    for &eps in schedule.values() {
        let h_eps = build_h_eps(h_op, delta, eps)?;
        resolvents.push(resolvent_apply(&h_eps, psi, tol)?);
    }
    let deltas: Vec<f64> = resolvents
        .windows(2)
        .map(|w| linalg::norm2(&linalg::sub(&w[0], &w[1])))
        .collect();
    let converged = deltas
        .last()
        .map(|d| *d <= 1e-8 * psi_norm)
        .unwrap_or(false);
    let limit = resolvents.last().cloned().unwrap_or_default();
    let direct = resolvent_apply(h_op, psi, tol)?;
    let direct_agreement = linalg::norm2(&linalg::sub(&limit, &direct));
    let eps_min = *schedule.values().last().unwrap();
    // u_eps - u_0 = -(H_eps+I)^{-1} eps Delta u_0, and the resolvent is a
    // contraction, so ||u_eps - u_0|| <= eps ||Delta u_0|| (+ CG residuals)
    let agreement_bound =
        eps_min * linalg::norm2(&delta.matvec(&direct)) + 4.0 * tol * psi_norm + 1e-14 * psi_norm;
    let identity_ok = direct_agreement <= agreement_bound;
    Ok(ViscosityDiagnostics {
        eps: schedule.values().to_vec(),
        deltas,
        converged,
        direct_agreement,
        agreement_bound,
        identity_ok,
        limit,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SemigroupOpts {
    /// Dense scaling-and-squaring path at or below this size; Lanczos-Krylov
    /// above it.
    pub dense_threshold: usize,
    pub krylov_dim: usize,
    pub tol: f64,
}

impl Default for SemigroupOpts {
    fn default() -> Self {
        SemigroupOpts {
            dense_threshold: 4096,
            krylov_dim: 64,
            tol: 1e-9,
        }
    }
}

fn dense_semigroup(op: &SparseOperator, t: f64) -> faer::Mat<f64> {
    let n = op.n();
    let mut a = op.to_dense();
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] *= -t;
        }
    }
    expm::expm(&a)
}

/// e^{-t op} v.
pub fn semigroup_apply(
    op: &SparseOperator,
    t: f64,
    v: &[f64],
    opts: &SemigroupOpts,
) -> Result<Vec<f64>> {
    if v.len() != op.n() {
        return Err(Error::ShapeMismatch(format!(
            "semigroup_apply: operator size {} vs vector length {}",
            op.n(),
            v.len()
        )));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("t >= 0 required, got {t}")));
    }
    if t == 0.0 {
        return Ok(v.to_vec());
    }
    if op.n() <= opts.dense_threshold {
        let e = dense_semigroup(op, t);
        let mut out = vec![0.0; op.n()];
        for i in 0..op.n() {
            let mut acc = 0.0;
            for j in 0..op.n() {
                acc += e[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        Ok(out)
    } else {
        let apply = |x: &[f64], out: &mut [f64]| op.apply(x, out);
        lanczos::expm_multiply(&apply, t, v, opts.tol, opts.krylov_dim)
    }
}

/// Diagnostics carried by every kernel slice.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelDiagnostics {
    pub symmetry_defect: f64,
    pub mass_defect: f64,
    pub min_entry: f64,
    pub max_entry: f64,
    /// |min(0, min_entry)| / max_entry
    pub negativity_rel: f64,
}

/// The kernel matrix K_t(x; y) = (e^{-t op})_{xy} / cell_vol at one time.
#[derive(Debug, Clone)]
pub struct KernelSlice {
    pub t: f64,
    grid: Grid,
    data: Vec<f64>, // row-major n_cells x n_cells
    pub diagnostics: KernelDiagnostics,
}

impl KernelSlice {
    pub fn from_matrix(t: f64, grid: Grid, data: Vec<f64>) -> KernelSlice {
        let n = grid.num_cells();
        assert_eq!(data.len(), n * n);
        let mut sym = 0.0f64;
        let mut min_e = f64::INFINITY;
        let mut max_e = f64::NEG_INFINITY;
        let mut mass = 0.0f64;
        let vol = grid.cell_vol();
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                let v = data[i * n + j];
                sym = sym.max((v - data[j * n + i]).abs());
                min_e = min_e.min(v);
                max_e = max_e.max(v);
                row_sum += v;
            }
            mass = mass.max((row_sum * vol - 1.0).abs());
        }
        let negativity_rel = if min_e < 0.0 && max_e > 0.0 {
            -min_e / max_e
        } else {
            0.0
        };
        KernelSlice {
            t,
            grid,
            data,
            diagnostics: KernelDiagnostics {
                symmetry_defect: sym,
                mass_defect: mass,
                min_entry: min_e,
                max_entry: max_e,
                negativity_rel,
            },
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn k(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.grid.num_cells() + y]
    }

    pub fn max_abs(&self) -> f64 {
        self.diagnostics
            .max_entry
            .abs()
            .max(self.diagnostics.min_entry.abs())
    }

    /// Kernel positivity / symmetry / mass within the stated tolerances.
    pub fn passes_diagnostics(&self) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        self.diagnostics.symmetry_defect <= 1e-9 * scale
            && self.diagnostics.mass_defect <= 1e-9
            && self.diagnostics.min_entry >= -1e-9 * scale
    }
}

/// Kernel matrix of e^{-t op}: column y is e^{-t op} e_y / cell_vol.
pub fn kernel_matrix(op: &SparseOperator, t: f64, opts: &SemigroupOpts) -> Result<KernelSlice> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t > 0 required, got {t}")));
    }
    let n = op.n();
    let vol = op.grid().cell_vol();
    let data = if n <= opts.dense_threshold {
        let e = dense_semigroup(op, t);
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = e[(i, j)] / vol;
            }
        }
        data
    } else {
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|y| {
                let mut ey = vec![0.0; n];
                ey[y] = 1.0;
                let apply = |x: &[f64], out: &mut [f64]| op.apply(x, out);
                lanczos::expm_multiply(&apply, t, &ey, opts.tol, opts.krylov_dim)
                    .map(|col| col.iter().map(|v| v / vol).collect())
            })
            .collect::<Result<_>>()?;
        let mut data = vec![0.0; n * n];
        for (y, col) in cols.iter().enumerate() {
            for x in 0..n {
                data[x * n + y] = col[x];
            }
        }
        data
    };
    Ok(KernelSlice::from_matrix(t, *op.grid(), data))
}

/// Computes kernel slices for all times, reporting each slice's diagnostics.
pub fn kernel_battery(
    op: &SparseOperator,
    times: &[f64],
    opts: &SemigroupOpts,
) -> Result<Vec<KernelSlice>> {
    times.iter().map(|&t| kernel_matrix(op, t, opts)).collect()
}

/// Default study grid: 16 log-spaced times in [max(4 dx^2, 1e-3), 1].
pub fn time_grid(grid: &Grid) -> Vec<f64> {
    let dx = grid.dx();
    let t_min = (4.0 * dx * dx).max(1e-3);
    let t_max = 1.0f64;
    let count = 16;
    (0..count)
        .map(|i| {
            let f = i as f64 / (count - 1) as f64;
            (t_min.ln() + f * (t_max.ln() - t_min.ln())).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_field, FieldFamily};
    use crate::grid::Grid;
    use crate::operators::{assemble_h, assemble_laplacian, form_h};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn grid1(n: usize, l: f64) -> Grid {
        Grid::new(1, n, l).unwrap()
    }

    fn fourier_mode(grid: &Grid, k: usize) -> Vec<f64> {
        (0..grid.num_cells())
            .map(|i| (2.0 * PI * k as f64 * grid.center(i)[0] / grid.l).cos())
            .collect()
    }

    #[test]
    fn eps_schedule_default_and_validation() {
        let s = EpsSchedule::default();
        assert_eq!(s.values().len(), 13);
        assert_eq!(s.values()[0], 1.0);
        assert_eq!(*s.values().last().unwrap(), 2.0_f64.powi(-12));
        assert!(EpsSchedule::new(vec![0.5, 0.5]).is_err());
        assert!(EpsSchedule::new(vec![1.5, 0.5]).is_err());
        assert!(EpsSchedule::new(vec![]).is_err());
    }

    #[test]
    fn h_eps_examples_are_exact() {
        let g = grid1(8, 1.0);
        let lap = assemble_laplacian(&g);
        let zero = assemble_h(&make_field(&g, &FieldFamily::Constant { c0: 0.0 }, 0).unwrap())
            .unwrap();
        let half = build_h_eps(&zero, &lap, 0.5).unwrap();
        let lap_half = lap.scaled(0.5, OperatorTag::Delta);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(half.entry(i, j).to_bits(), lap_half.entry(i, j).to_bits());
            }
        }

        let unit = assemble_h(&make_field(&g, &FieldFamily::Constant { c0: 1.0 }, 0).unwrap())
            .unwrap();
        let two = build_h_eps(&unit, &lap, 1.0).unwrap();
        let lap2 = lap.scaled(2.0, OperatorTag::Delta);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(two.entry(i, j).to_bits(), lap2.entry(i, j).to_bits());
            }
        }
        assert!(build_h_eps(&unit, &lap, 0.0).is_err());
        assert!(build_h_eps(&unit, &lap, 1.01).is_err());
    }

    #[test]
    fn h_eps_rayleigh_above_eps_lambda2() {
        let g = grid1(32, 2.0);
        let lap = assemble_laplacian(&g);
        let f = make_field(&g, &FieldFamily::DegenerateSine { power: 2 }, 0).unwrap();
        let h = assemble_h(&f).unwrap();
        let eps = 0.125;
        let h_eps = build_h_eps(&h, &lap, eps).unwrap();
        let dx = g.dx();
        let lambda2 = 2.0 / (dx * dx) * (1.0 - (2.0 * PI / g.n as f64).cos());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut phi: Vec<f64> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
            linalg::remove_mean(&mut phi);
            let q = linalg::dot(&phi, &h_eps.matvec(&phi)) / linalg::dot(&phi, &phi);
            assert!(q >= eps * lambda2 * (1.0 - 1e-10), "q = {q}");
        }
    }

    #[test]
    fn resolvent_examples() {
        let g = grid1(16, 1.0);
        let lap = assemble_laplacian(&g);
        // zero operator: u = psi
        let zero = assemble_h(&make_field(&g, &FieldFamily::Constant { c0: 0.0 }, 0).unwrap())
            .unwrap();
        let psi: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let u = resolvent_apply(&zero, &psi, 1e-10).unwrap();
        for (a, b) in u.iter().zip(&psi) {
            assert!((a - b).abs() < 1e-12);
        }
        // eigenvector: u = psi / (1 + lambda)
        let k = 2;
        let mode = fourier_mode(&g, k);
        let dx = g.dx();
        let lam = 2.0 / (dx * dx) * (1.0 - (2.0 * PI * k as f64 / 16.0).cos());
        let u = resolvent_apply(&lap, &mode, 1e-12).unwrap();
        for (a, b) in u.iter().zip(&mode) {
            assert!((a - b / (1.0 + lam)).abs() < 1e-9, "{a} vs {}", b / (1.0 + lam));
        }
        // constants pass through: (H_eps + I)^{-1} 1 = 1
        let ones = vec![1.0; 16];
        let u = resolvent_apply(&lap, &ones, 1e-12).unwrap();
        for a in &u {
            assert!((a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn resolvent_matches_dense_direct_solve() {
        use nalgebra::{DMatrix, DVector};
        let g = grid1(24, 2.0);
        let f = make_field(
            &g,
            &FieldFamily::Lognormal {
                sigma: 0.6,
                correlation_len: 0.2,
            },
            5,
        )
        .unwrap();
        let h = assemble_h(&f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi: Vec<f64> = (0..24).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u = resolvent_apply(&h, &psi, 1e-12).unwrap();
        let dense = DMatrix::<f64>::from_fn(24, 24, |i, j| {
            h.entry(i, j) + if i == j { 1.0 } else { 0.0 }
        });
        let rhs = DVector::from_column_slice(&psi);
        let direct = dense.lu().solve(&rhs).unwrap();
        for i in 0..24 {
            assert!((u[i] - direct[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn viscosity_limit_constant_field_deltas_track_eps_gaps() {
        let g = grid1(32, 1.0);
        let f = make_field(&g, &FieldFamily::Constant { c0: 1.0 }, 0).unwrap();
        let h = assemble_h(&f).unwrap();
        let lap = assemble_laplacian(&g);
        let k = 1;
        let psi = fourier_mode(&g, k);
        let dx = g.dx();
        let lam = 2.0 / (dx * dx) * (1.0 - (2.0 * PI / 32.0).cos());
        let sched = EpsSchedule::default();
        let diag = viscosity_limit(&h, &lap, &sched, &psi, 1e-12).unwrap();
        assert!(diag.identity_ok);
        // for an eigenvector, delta_j / (eps_j - eps_{j+1}) converges to
        // lambda ||psi|| / (1 + lambda)^2 for small eps
        let psi_norm = linalg::norm2(&psi);
        let eps = sched.values();
        let last = diag.deltas.len() - 1;
        let predicted = lam * psi_norm / ((1.0 + (1.0 + eps[last]) * lam) * (1.0 + (1.0 + eps[last + 1]) * lam));
        let ratio = diag.deltas[last] / (eps[last] - eps[last + 1]);
        assert!(
            (ratio - predicted).abs() <= 0.01 * predicted,
            "ratio {ratio} vs {predicted}"
        );
        // Cauchy decay
        for w in diag.deltas.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn viscosity_limit_zero_operator_and_constants() {
        let g = grid1(16, 1.0);
        let zero = assemble_h(&make_field(&g, &FieldFamily::Constant { c0: 0.0 }, 0).unwrap())
            .unwrap();
        let lap = assemble_laplacian(&g);
        let psi: Vec<f64> = (0..16).map(|i| ((i * i) as f64 * 0.11).cos()).collect();
        let sched = EpsSchedule::default();
        let diag = viscosity_limit(&zero, &lap, &sched, &psi, 1e-12).unwrap();
        assert!(diag.identity_ok);
        // limit approaches psi itself (resolvent of the zero operator)
        let err = linalg::norm2(&linalg::sub(&diag.limit, &psi));
        assert!(err <= 2.0_f64.powi(-12) * linalg::norm2(&lap.matvec(&psi)) + 1e-9);
        // for rough psi the eps Delta resolvent saturates while
        // eps * lambda_max > 1, so Cauchy decay shows up at the tail of the
        // schedule only
        let m = diag.deltas.len();
        assert!(diag.deltas[m - 1] < diag.deltas[m - 2]);
        assert!(diag.deltas[m - 2] < diag.deltas[m - 3]);

        // psi constant: every resolvent returns psi
        let ones = vec![1.0; 16];
        let diag = viscosity_limit(&zero, &lap, &sched, &ones, 1e-12).unwrap();
        assert!(diag.deltas.iter().all(|d| *d <= 1e-12));
        assert!(diag.converged);
    }

    #[test]
    fn semigroup_identity_at_t_zero_and_mode_decay() {
        let g = grid1(32, 1.0);
        let lap = assemble_laplacian(&g);
        let opts = SemigroupOpts::default();
        let v: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        assert_eq!(semigroup_apply(&lap, 0.0, &v, &opts).unwrap(), v);

        let k = 3;
        let mode = fourier_mode(&g, k);
        let dx = g.dx();
        let lam = 2.0 / (dx * dx) * (1.0 - (2.0 * PI * k as f64 / 32.0).cos());
        let t = 3e-3;
        let out = semigroup_apply(&lap, t, &mode, &opts).unwrap();
        let decay = (-t * lam).exp();
        for (a, b) in out.iter().zip(&mode) {
            assert!((a - b * decay).abs() <= 1e-9 * decay.max(1e-3));
        }

        // mass conservation and contraction
        let ones = vec![1.0; 32];
        let out = semigroup_apply(&lap, 0.7, &ones, &opts).unwrap();
        for a in &out {
            assert!((a - 1.0).abs() <= 1e-12);
        }
        let out = semigroup_apply(&lap, 0.2, &v, &opts).unwrap();
        assert!(linalg::norm2(&out) <= linalg::norm2(&v) * (1.0 + 1e-12));
    }

    #[test]
    fn krylov_path_matches_dense_path() {
        let g = grid1(96, 4.0);
        let f = make_field(
            &g,
            &FieldFamily::Checkerboard {
                c_lo: 0.4,
                c_hi: 3.0,
            },
            0,
        )
        .unwrap();
        let h = assemble_h(&f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let v: Vec<f64> = (0..96).map(|_| StandardNormal.sample(&mut rng)).collect();
        let dense = semigroup_apply(&h, 0.31, &v, &SemigroupOpts::default()).unwrap();
        let mut opts = SemigroupOpts::default();
        opts.dense_threshold = 8; // force the Lanczos path
        let krylov = semigroup_apply(&h, 0.31, &v, &opts).unwrap();
        let scale = linalg::norm2(&v);
        let err = linalg::norm2(&linalg::sub(&dense, &krylov));
        assert!(err <= 1e-8 * scale, "err = {err:.3e}");
    }

    #[test]
    fn kernel_zero_generator_is_identity_over_vol() {
        let g = grid1(16, 1.0);
        let zero = assemble_h(&make_field(&g, &FieldFamily::Constant { c0: 0.0 }, 0).unwrap())
            .unwrap();
        let ks = kernel_matrix(&zero, 0.5, &SemigroupOpts::default()).unwrap();
        let inv_vol = 1.0 / g.cell_vol();
        for x in 0..16 {
            for y in 0..16 {
                let want = if x == y { inv_vol } else { 0.0 };
                assert_eq!(ks.k(x, y), want);
            }
        }
        assert!(ks.passes_diagnostics());
    }

    #[test]
    fn kernel_matches_spectral_oracle() {
        // independent route: nalgebra eigendecomposition of the dense operator
        use nalgebra::DMatrix;
        let g = grid1(48, 2.0);
        let f = make_field(
            &g,
            &FieldFamily::Lognormal {
                sigma: 0.4,
                correlation_len: 0.25,
            },
            9,
        )
        .unwrap();
        let h = assemble_h(&f).unwrap();
        let t = 0.07;
        let ks = kernel_matrix(&h, t, &SemigroupOpts::default()).unwrap();
        let dense = DMatrix::<f64>::from_fn(48, 48, |i, j| h.entry(i, j));
        let se = dense.symmetric_eigen();
        let mut want = DMatrix::<f64>::zeros(48, 48);
        for k in 0..48 {
            let v = se.eigenvectors.column(k);
            want += v * v.transpose() * (-t * se.eigenvalues[k]).exp();
        }
        let vol = g.cell_vol();
        let scale = ks.max_abs();
        for i in 0..48 {
            for j in 0..48 {
                assert!(
                    (ks.k(i, j) - want[(i, j)] / vol).abs() <= 1e-10 * scale,
                    "kernel mismatch at ({i},{j})"
                );
            }
        }
        assert!(ks.passes_diagnostics());
    }

    #[test]
    fn kernel_peak_tracks_theta_series() {
        // theta-series oracle at n=256, L=8, t=0.05: the peak deviation is
        // dominated by the 2nd-order dispersion floor dx^2/(16 t) ~ 1.2e-3
        let g = grid1(256, 8.0);
        let lap = assemble_laplacian(&g);
        let t = 0.05;
        let slice = kernel_matrix(&lap, t, &SemigroupOpts::default()).unwrap();
        let peak_ref = crate::reference::periodized_gaussian(&g, 0, 0, t, 6);
        let rel = (slice.k(0, 0) - peak_ref).abs() / peak_ref;
        assert!(rel <= 1.25e-3, "peak rel err = {rel:.3e}");
        assert!(rel >= 1e-4, "suspiciously small dispersion error {rel:.3e}");
    }

    #[test]
    fn kernel_semigroup_property() {
        let g = grid1(24, 1.0);
        let f = make_field(
            &g,
            &FieldFamily::Checkerboard {
                c_lo: 0.5,
                c_hi: 2.0,
            },
            0,
        )
        .unwrap();
        let h = assemble_h(&f).unwrap();
        let opts = SemigroupOpts::default();
        let vol = g.cell_vol();
        for (t, s) in [(0.05, 0.03), (0.2, 0.2), (0.4, 0.1)] {
            let kt = kernel_matrix(&h, t, &opts).unwrap();
            let kss = kernel_matrix(&h, s, &opts).unwrap();
            let kts = kernel_matrix(&h, t + s, &opts).unwrap();
            let n = 24;
            let mut worst = 0.0f64;
            for x in 0..n {
                for y in 0..n {
                    let mut acc = 0.0;
                    for z in 0..n {
                        acc += kt.k(x, z) * kss.k(z, y);
                    }
                    worst = worst.max((kts.k(x, y) - acc * vol).abs());
                }
            }
            assert!(
                worst <= 1e-7 * kts.max_abs(),
                "semigroup defect {worst:.3e} at (t,s)=({t},{s})"
            );
        }
    }

    #[test]
    fn spectral_inequality_holds_on_time_grid() {
        let g = grid1(32, 2.0);
        let f = make_field(&g, &FieldFamily::DegenerateSine { power: 2 }, 0).unwrap();
        let h = assemble_h(&f).unwrap();
        let opts = SemigroupOpts::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let vol = g.cell_vol();
        for &t in &time_grid(&g) {
            for _ in 0..5 {
                let phi: Vec<f64> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
                let h_val = form_h(&h, &phi).unwrap().value();
                let s_phi = semigroup_apply(&h, t, &phi, &opts).unwrap();
                let quad =
                    (linalg::dot(&phi, &phi) - linalg::dot(&phi, &s_phi)) * vol / t;
                let scale = h_val.max(1.0);
                assert!(
                    h_val >= quad - 1e-8 * scale,
                    "t = {t}: h = {h_val}, t^-1 (phi,(I-S)phi) = {quad}"
                );
            }
        }
    }

    #[test]
    fn viscosity_kernels_converge_to_direct_kernel() {
        let g = grid1(16, 1.0);
        let f = make_field(&g, &FieldFamily::DegenerateSine { power: 2 }, 0).unwrap();
        let h = assemble_h(&f).unwrap();
        let lap = assemble_laplacian(&g);
        let opts = SemigroupOpts::default();
        let t = 0.1;
        let direct = kernel_matrix(&h, t, &opts).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [0.25, 0.0625, 0.015625, 0.00390625] {
            let h_eps = build_h_eps(&h, &lap, eps).unwrap();
            let k_eps = kernel_matrix(&h_eps, t, &opts).unwrap();
            let mut worst = 0.0f64;
            for x in 0..16 {
                for y in 0..16 {
                    worst = worst.max((k_eps.k(x, y) - direct.k(x, y)).abs());
                }
            }
            assert!(worst < prev, "kernel drift not decreasing: {worst} vs {prev}");
            prev = worst;
        }
        assert!(prev <= 0.2 * direct.max_abs(), "final drift {prev}");
    }

    #[test]
    fn time_grid_respects_resolution_floor() {
        let g = grid1(256, 8.0);
        let ts = time_grid(&g);
        assert_eq!(ts.len(), 16);
        let dx = g.dx();
        assert!((ts[0] - 4.0 * dx * dx).abs() < 1e-12);
        assert!((ts[15] - 1.0).abs() < 1e-12);
        for w in ts.windows(2) {
            assert!(w[1] > w[0]);
        }
        // coarse grid where 4 dx^2 < 1e-3 never happens at L=8; check floor
        let g2 = Grid::new(1, 512, 0.5).unwrap();
        assert!((time_grid(&g2)[0] - 1e-3).abs() < 1e-15);
    }
}
