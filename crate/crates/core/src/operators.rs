//! Discrete divergence-form operators on the periodic grid.
//!
//! H = G^T M_C G with face-averaged coefficients: axis terms use the
//! arithmetic mean of the two adjacent cells, cross terms (d = 2) couple the
//! centered per-axis differences through the cell value of c_xy. Assembled
//! operators are symmetric with zero row sums by construction; the diagonal
//! is stored as the negated off-diagonal row sum and the matrix-vector
//! product is evaluated in difference form, so constants are annihilated
//! exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::Grid;
use crate::linalg::fourier::DeltaSpectral;
use crate::linalg::{self, lobpcg};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OperatorTag {
    H,
    Delta,
    HEps { eps: f64 },
    Other,
}

/// Sparse symmetric operator with zero row sums. Off-diagonal entries are
/// stored in CSR; `diag[i]` is derived as the negated ascending-order sum of
/// row i's off-diagonal values.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    grid: Grid,
    tag: OperatorTag,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    off_values: Vec<f64>,
    diag: Vec<f64>,
}

struct SymBuilder {
    rows: Vec<BTreeMap<usize, f64>>,
}

impl SymBuilder {
    fn new(n: usize) -> Self {
        SymBuilder {
            rows: vec![BTreeMap::new(); n],
        }
    }

    /// Adds `v` at (i, j) and (j, i), i != j. Both slots see the same
    /// addition sequence, which keeps the stored matrix exactly symmetric.
    fn add_pair(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_ne!(i, j);
        *self.rows[i].entry(j).or_insert(0.0) += v;
        *self.rows[j].entry(i).or_insert(0.0) += v;
    }

    fn finish(self, grid: Grid, tag: OperatorTag) -> SparseOperator {
        let n = self.rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut off_values = Vec::new();
        let mut diag = Vec::with_capacity(n);
        row_ptr.push(0);
        for row in self.rows {
            let mut sum = 0.0;
            for (j, v) in row {
                col_idx.push(j);
                off_values.push(v);
                sum += v;
            }
            diag.push(-sum);
            row_ptr.push(col_idx.len());
        }
        SparseOperator {
            grid,
            tag,
            row_ptr,
            col_idx,
            off_values,
            diag,
        }
    }
}

impl SparseOperator {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tag(&self) -> OperatorTag {
        self.tag
    }

    pub fn nnz_off_diagonal(&self) -> usize {
        self.off_values.len()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.off_values[lo..hi].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.off_values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Difference-form product: (Hv)_i = sum_j H_ij (v_j - v_i). Constants
    /// are annihilated exactly.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n());
        for i in 0..self.n() {
            let vi = v[i];
            let mut acc = 0.0;
            for (j, w) in self.row(i) {
                acc += w * (v[j] - vi);
            }
            out[i] = acc;
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.apply(v, &mut out);
        out
    }

    /// Max row abs sum; a cheap operator-norm upper bound used for scales.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n())
            .map(|i| self.diag[i].abs() + self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Max |H_ij - H_ji| over stored entries; zero by construction.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.entry(j, i)).abs());
            }
        }
        worst
    }

    /// Max |row sum| of the stored matrix (diagonal inserted at its sorted
    /// position).
    pub fn row_sum_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            let mut sum = 0.0;
            let mut diag_done = false;
            for (j, v) in self.row(i) {
                if !diag_done && j > i {
                    sum += self.diag[i];
                    diag_done = true;
                }
                sum += v;
            }
            if !diag_done {
                sum += self.diag[i];
            }
            worst = worst.max(sum.abs());
        }
        worst
    }

    /// Entrywise scaling; the derived diagonal is recomputed from the scaled
    /// off-diagonals, so `assemble_h(constant(c))` equals
    /// `assemble_laplacian(grid).scaled(c)` exactly.
    pub fn scaled(&self, c: f64, tag: OperatorTag) -> SparseOperator {
        let off_values: Vec<f64> = self.off_values.iter().map(|v| c * v).collect();
        let mut diag = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            diag.push(-off_values[lo..hi].iter().sum::<f64>());
        }
        SparseOperator {
            grid: self.grid,
            tag,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            off_values,
            diag,
        }
    }

    /// Entrywise sum of two operators on the same grid.
    pub fn add(&self, other: &SparseOperator, tag: OperatorTag) -> Result<SparseOperator> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch(
                "operator addition requires identical grids".into(),
            ));
        }
        let n = self.n();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut off_values = Vec::new();
        let mut diag = Vec::with_capacity(n);
        row_ptr.push(0);
        for i in 0..n {
            let mut a = self.row(i).peekable();
            let mut b = other.row(i).peekable();
            let mut sum = 0.0;
            loop {
                let next = match (a.peek(), b.peek()) {
                    (Some(&(ja, va)), Some(&(jb, vb))) => {
                        if ja == jb {
                            a.next();
                            b.next();
                            (ja, va + vb)
                        } else if ja < jb {
                            a.next();
                            (ja, va)
                        } else {
                            b.next();
                            (jb, vb)
                        }
                    }
                    (Some(&(ja, va)), None) => {
                        a.next();
                        (ja, va)
                    }
                    (None, Some(&(jb, vb))) => {
                        b.next();
                        (jb, vb)
                    }
                    (None, None) => break,
                };
                col_idx.push(next.0);
                off_values.push(next.1);
                sum += next.1;
            }
            diag.push(-sum);
            row_ptr.push(col_idx.len());
        }
        Ok(SparseOperator {
            grid: self.grid,
            tag,
            row_ptr,
            col_idx,
            off_values,
            diag,
        })
    }

    pub fn to_dense(&self) -> faer::Mat<f64> {
        let n = self.n();
        let mut m = faer::Mat::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Min Rayleigh quotient over seeded random probes, relative to the
    /// operator norm bound; the numerical PSD spot check.
    pub fn psd_probe(&self, trials: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        for _ in 0..trials {
            let v: Vec<f64> = (0..self.n()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let q = linalg::dot(&v, &self.matvec(&v)) / linalg::dot(&v, &v);
            worst = worst.min(q / scale);
        }
        worst
    }
}

/// Per-axis forward face differences with periodic wrap:
/// `(G_a v)[cell] = (v[cell + e_a] - v[cell]) / dx`, indexed by the face's
/// lower cell.
pub struct GradientMatrix {
    grid: Grid,
}

pub fn gradient_matrix(grid: &Grid) -> GradientMatrix {
    GradientMatrix { grid: *grid }
}

impl GradientMatrix {
    pub fn apply_axis(&self, axis: usize, v: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let dx = g.dx();
        let mut out = vec![0.0; g.num_cells()];
        for idx in 0..g.num_cells() {
            let (ix, iy) = g.coords(idx);
            let nb = if axis == 0 {
                g.index(ix as isize + 1, iy as isize)
            } else {
                g.index(ix as isize, iy as isize + 1)
            };
            out[idx] = (v[nb] - v[idx]) / dx;
        }
        out
    }
}

/// Assembles H = -div(C grad) for the field's grid.
pub fn assemble_h(field: &CoefficientField) -> Result<SparseOperator> {
    let grid = *field.grid();
    let n_cells = grid.num_cells();
    let dx = grid.dx();
    let inv_dx2 = 1.0 / (dx * dx);
    let mut b = SymBuilder::new(n_cells);
    if grid.d == 1 {
        for i in 0..n_cells {
            let j = (i + 1) % grid.n;
            let cf = 0.5 * (field.cell(i)[0] + field.cell(j)[0]);
            let w = cf * inv_dx2;
            if w != 0.0 {
                b.add_pair(i, j, -w);
            }
        }
    } else {
        for idx in 0..n_cells {
            let (ix, iy) = grid.coords(idx);
            let (ix, iy) = (ix as isize, iy as isize);
            // x-face to (ix+1, iy)
            let q = grid.index(ix + 1, iy);
            let cf = 0.5 * (field.cell(idx)[0] + field.cell(q)[0]);
            let w = cf * inv_dx2;
            if w != 0.0 {
                b.add_pair(idx, q, -w);
            }
            // y-face to (ix, iy+1)
            let q = grid.index(ix, iy + 1);
            let cf = 0.5 * (field.cell(idx)[2] + field.cell(q)[2]);
            let w = cf * inv_dx2;
            if w != 0.0 {
                b.add_pair(idx, q, -w);
            }
            // cross term: 2 c_xy gbar_x gbar_y with centered differences,
            // i.e. kappa (v_a - v_b)(v_c - v_d), kappa = c_xy/(2 dx^2)
            let cxy = field.cell(idx)[1];
            if cxy != 0.0 {
                let half = cxy * inv_dx2 * 0.25; // kappa / 2
                let a = grid.index(ix + 1, iy);
                let bb = grid.index(ix - 1, iy);
                let c = grid.index(ix, iy + 1);
                let d = grid.index(ix, iy - 1);
                b.add_pair(a, c, half);
                b.add_pair(a, d, -half);
                b.add_pair(bb, c, -half);
                b.add_pair(bb, d, half);
            }
        }
    }
    let op = b.finish(grid, OperatorTag::H);
    let probe = op.psd_probe(8, 0xC0FFEE);
    if probe < -1e-10 {
        return Err(Error::InvalidField(format!(
            "assembled operator failed the PSD spot check (min Rayleigh / ||op|| = {probe:.3e})"
        )));
    }
    Ok(op)
}

/// The discrete self-adjoint Laplacian: `assemble_h` with unit coefficients.
pub fn assemble_laplacian(grid: &Grid) -> SparseOperator {
    let field = crate::field::make_field(grid, &crate::field::FieldFamily::Constant { c0: 1.0 }, 0)
        .expect("unit field is always valid");
    let mut op = assemble_h(&field).expect("unit Laplacian assembly cannot fail");
    op.tag = OperatorTag::Delta;
    op
}

/// Nonnegative quadratic-form value; a discrete L2 integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormValue(f64);

impl FormValue {
    pub fn value(&self) -> f64 {
        self.0
    }
}

/// phi^T op phi * cell_vol. Tiny negative rounding residues (PSD operators
/// only) are clamped to zero.
pub fn form_h(op: &SparseOperator, phi: &[f64]) -> Result<FormValue> {
    if phi.len() != op.n() {
        return Err(Error::ShapeMismatch(format!(
            "form_h: operator size {} vs vector length {}",
            op.n(),
            phi.len()
        )));
    }
    let raw = linalg::dot(phi, &op.matvec(phi)) * op.grid().cell_vol();
    let scale = op.norm_inf() * linalg::dot(phi, phi) * op.grid().cell_vol();
    let value = if raw < 0.0 && raw >= -1e-10 * scale.max(f64::MIN_POSITIVE) {
        0.0
    } else {
        raw
    };
    Ok(FormValue(value))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichViolation {
    pub trial: usize,
    pub eps: f64,
    pub kind: String,
    pub amount: f64,
}

/// Report of the viscosity-form sandwich check eps*l <= h_eps <= (1+||C||) l.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichReport {
    pub eps: Vec<f64>,
    pub trials: usize,
    pub norm_c: f64,
    /// min over trials/eps of h_eps - eps*l (= h(phi), nonnegative)
    pub worst_lower_margin: f64,
    /// min over trials/eps of (1+||C||) l + tol - h_eps
    pub worst_upper_margin: f64,
    /// max |form(H_eps, phi) - (h + eps l)| / scale across trials
    pub operator_route_defect: f64,
    pub pass: bool,
    pub violations: Vec<SandwichViolation>,
}

/// Checks the sandwich bounds on seeded random test functions. The margins
/// use the bilinear identity h_eps = h + eps*l; the assembled H_eps operators
/// are cross-checked against that identity and the relative defect reported.
pub fn sandwich_check(
    h_op: &SparseOperator,
    delta: &SparseOperator,
    field: &CoefficientField,
    eps_values: &[f64],
    trials: usize,
    seed: u64,
) -> Result<SandwichReport> {
    for &eps in eps_values {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sandwich eps must lie in (0, 1], got {eps}"
            )));
        }
    }
    let norm_c = field.norm_c();
    let assembled: Vec<SparseOperator> = eps_values
        .iter()
        .map(|&eps| crate::semigroup::build_h_eps(h_op, delta, eps))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_lower = f64::INFINITY;
    let mut worst_upper = f64::INFINITY;
    let mut route_defect = 0.0f64;
    let mut violations = Vec::new();
    for trial in 0..trials {
        let phi: Vec<f64> = (0..h_op.n()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = form_h(h_op, &phi)?.value();
        let l = form_h(delta, &phi)?.value();
        for (k, &eps) in eps_values.iter().enumerate() {
            let h_eps = h + eps * l;
            let scale = (1.0 + norm_c) * l;
            let lower = h_eps - eps * l;
            let upper = (1.0 + norm_c) * l + 1e-10 * scale - h_eps;
            worst_lower = worst_lower.min(lower);
            worst_upper = worst_upper.min(upper);
            if lower < 0.0 {
                violations.push(SandwichViolation {
                    trial,
                    eps,
                    kind: "lower".into(),
                    amount: lower,
                });
            }
            if upper < 0.0 {
                violations.push(SandwichViolation {
                    trial,
                    eps,
                    kind: "upper".into(),
                    amount: upper,
                });
            }
            let via_op = form_h(&assembled[k], &phi)?.value();
            let defect = (via_op - h_eps).abs() / scale.max(f64::MIN_POSITIVE);
            route_defect = route_defect.max(defect);
        }
    }
    let pass = violations.is_empty() && route_defect <= 1e-10;
    Ok(SandwichReport {
        eps: eps_values.to_vec(),
        trials,
        norm_c,
        worst_lower_margin: worst_lower,
        worst_upper_margin: worst_upper,
        operator_route_defect: route_defect,
        pass,
        violations,
    })
}

/// Garding constant of the pencil (H, Delta) on the mean-zero subspace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GardingResult {
    /// Largest mu with h >= mu * l: the smallest generalized eigenvalue.
    pub mu: f64,
    /// Shift of the relaxed inequality h >= mu l - nu ||.||^2; identically 0
    /// on the torus, where deflating constants collapses it to the unshifted
    /// form.
    pub nu: f64,
    pub method: String,
    pub iterations: usize,
    /// Minimizing grid function (unit L2 norm, sign-normalized).
    pub eigvec: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct GardingOpts {
    /// Dense Fourier-congruence path for N at or below this size.
    pub dense_threshold: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub lobpcg_block: usize,
    pub seed: u64,
}

impl Default for GardingOpts {
    fn default() -> Self {
        GardingOpts {
            dense_threshold: 4096,
            tol: 1e-8,
            max_iter: 5000,
            lobpcg_block: 8,
            seed: 0x6a2d,
        }
    }
}

fn sign_normalize(v: &mut [f64]) {
    let nrm = linalg::norm2(v);
    if nrm > 0.0 {
        linalg::scale(1.0 / nrm, v);
    }
    let thresh = 1e-10;
    if let Some(first) = v.iter().find(|x| x.abs() > thresh) {
        if *first < 0.0 {
            linalg::scale(-1.0, v);
        }
    }
}

pub fn garding_constant(
    h_op: &SparseOperator,
    delta: &SparseOperator,
    opts: &GardingOpts,
) -> Result<GardingResult> {
    if h_op.grid() != delta.grid() {
        return Err(Error::ShapeMismatch(
            "garding_constant: operators live on different grids".into(),
        ));
    }
    let n = h_op.n();
    let sp = DeltaSpectral::new(h_op.grid());
    let congruence = |v: &[f64], out: &mut [f64]| {
        let tv = sp.apply_inv_sqrt_deflated(v);
        let htv = h_op.matvec(&tv);
        out.copy_from_slice(&sp.apply_inv_sqrt_deflated(&htv));
    };
    if n <= opts.dense_threshold {
        // build M = T H T (+ beta on the deflated constant mode) and take
        // its smallest eigenvalue with one dense symmetric solve
        let beta = 1.0 + h_op.norm_inf() / sp.lambda2();
        use rayon::prelude::*;
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let mut col = vec![0.0; n];
                congruence(&e, &mut col);
                col
            })
            .collect();
        let shift = beta / n as f64;
        let m = faer::Mat::<f64>::from_fn(n, n, |i, j| columns[j][i] + shift);
        let evd = m
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|_| Error::NoConvergence {
                solver: "dense-eigen",
                iterations: 0,
                residual: f64::NAN,
            })?;
        let mu = evd.S()[0];
        let u = evd.U();
        let w: Vec<f64> = (0..n).map(|i| u[(i, 0)]).collect();
        let mut eigvec = sp.apply_inv_sqrt_deflated(&w);
        sign_normalize(&mut eigvec);
        Ok(GardingResult {
            mu,
            nu: 0.0,
            method: "dense-fourier-congruence".into(),
            iterations: 0,
            eigvec,
        })
    } else {
        let (mu, w, iterations) = lobpcg::smallest_eigenpair(
            &congruence,
            n,
            opts.lobpcg_block,
            opts.tol,
            opts.max_iter,
            opts.seed,
        )?;
        let mut eigvec = sp.apply_inv_sqrt_deflated(&w);
        sign_normalize(&mut eigvec);
        Ok(GardingResult {
            mu,
            nu: 0.0,
            method: "lobpcg-fourier-congruence".into(),
            iterations,
            eigvec,
        })
    }
}

/// Modulated-wave scan: k^{-2} h(e^{i k x.xi} phi) against the local average
/// sum |phi|^2 (xi, C xi) * cell_vol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModulatedWaveScan {
    /// (k, k^{-2} h(phi_k)) pairs in schedule order.
    pub points: Vec<(f64, f64)>,
    pub reference: f64,
}

/// Default k schedule {4, 8, 16, 32} * 2 pi / L, truncated by the
/// resolution constraint k dx <= pi/4.
pub fn default_k_schedule(grid: &Grid) -> Vec<f64> {
    let base = 2.0 * std::f64::consts::PI / grid.l;
    [4.0, 8.0, 16.0, 32.0]
        .iter()
        .map(|m| m * base)
        .filter(|k| k * grid.dx() <= std::f64::consts::FRAC_PI_4 * (1.0 + 1e-12))
        .collect()
}

pub fn modulated_wave_limit(
    field: &CoefficientField,
    phi: &[f64],
    xi: &[f64],
    k_list: &[f64],
) -> Result<ModulatedWaveScan> {
    let grid = field.grid();
    if phi.len() != grid.num_cells() {
        return Err(Error::ShapeMismatch(format!(
            "modulated_wave_limit: phi length {} vs {} cells",
            phi.len(),
            grid.num_cells()
        )));
    }
    if xi.len() != grid.d {
        return Err(Error::ShapeMismatch(format!(
            "xi must have {} components",
            grid.d
        )));
    }
    let xi_norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (xi_norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "xi must be a unit vector, |xi| = {xi_norm}"
        )));
    }
    if k_list.windows(2).any(|w| w[0] >= w[1]) || k_list.iter().any(|k| *k <= 0.0) {
        return Err(Error::InvalidArgument(
            "k_list must be strictly increasing and positive".into(),
        ));
    }
    if let Some(&k_max) = k_list.last() {
        if k_max * grid.dx() > std::f64::consts::FRAC_PI_4 * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "k dx = {:.4} exceeds the resolution constraint pi/4",
                k_max * grid.dx()
            )));
        }
    }
    let h_op = assemble_h(field)?;
    let n_cells = grid.num_cells();
    let mut points = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let mut re = vec![0.0; n_cells];
        let mut im = vec![0.0; n_cells];
        for idx in 0..n_cells {
            let c = grid.center(idx);
            let phase = k * (c[0] * xi[0] + if grid.d == 2 { c[1] * xi[1] } else { 0.0 });
            re[idx] = phase.cos() * phi[idx];
            im[idx] = phase.sin() * phi[idx];
        }
        let val = (form_h(&h_op, &re)?.value() + form_h(&h_op, &im)?.value()) / (k * k);
        points.push((k, val));
    }
    let vol = grid.cell_vol();
    let mut reference = 0.0;
    for idx in 0..n_cells {
        let [xx, xy, yy] = field.cell(idx);
        let quad = if grid.d == 1 {
            xx * xi[0] * xi[0]
        } else {
            xx * xi[0] * xi[0] + 2.0 * xy * xi[0] * xi[1] + yy * xi[1] * xi[1]
        };
        reference += phi[idx] * phi[idx] * quad * vol;
    }
    Ok(ModulatedWaveScan { points, reference })
}
