//! Coefficient matrix fields C = (c_ij): symmetric positive-semidefinite
//! per-cell matrices, piecewise constant over grid cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Coefficient families nameable in scenario configs.
///
/// Scalar families stand for c(x)·I; `anisotropic` is a constant full 2x2
/// matrix (d = 2 only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldFamily {
    Constant { c0: f64 },
    ScalarTable { values: Vec<f64> },
    Checkerboard { c_lo: f64, c_hi: f64 },
    Lognormal { sigma: f64, correlation_len: f64 },
    DegenerateSine { power: u32 },
    Anisotropic { c_xx: f64, c_yy: f64, c_xy: f64 },
}

impl FieldFamily {
    pub fn tag(&self) -> String {
        match self {
            FieldFamily::Constant { c0 } => format!("constant({c0})"),
            FieldFamily::ScalarTable { values } => format!("scalar_table[{}]", values.len()),
            FieldFamily::Checkerboard { c_lo, c_hi } => format!("checkerboard({c_lo},{c_hi})"),
            FieldFamily::Lognormal {
                sigma,
                correlation_len,
            } => format!("lognormal({sigma},{correlation_len})"),
            FieldFamily::DegenerateSine { power } => format!("degenerate_sine({power})"),
            FieldFamily::Anisotropic { c_xx, c_yy, c_xy } => {
                format!("anisotropic({c_xx},{c_yy},{c_xy})")
            }
        }
    }
}

/// Per-cell symmetric matrix stored as [c_xx, c_xy, c_yy]; 1d fields use only
/// the first slot.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    grid: Grid,
    mats: Vec<[f64; 3]>,
    family_tag: String,
}

impl CoefficientField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn family_tag(&self) -> &str {
        &self.family_tag
    }

    pub fn cell(&self, idx: usize) -> [f64; 3] {
        self.mats[idx]
    }

    /// Closed-form eigenvalue range of the 2x2 (or 1x1) cell matrix.
    pub fn cell_eig(&self, idx: usize) -> (f64, f64) {
        let [xx, xy, yy] = self.mats[idx];
        if self.grid.d == 1 {
            (xx, xx)
        } else {
            let mean = 0.5 * (xx + yy);
            let rad = (0.5 * (xx - yy)).hypot(xy);
            (mean - rad, mean + rad)
        }
    }

    /// Discrete essential bounds: (min over cells of lambda_min, max over
    /// cells of lambda_max).
    pub fn eig_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for idx in 0..self.mats.len() {
            let (a, b) = self.cell_eig(idx);
            lo = lo.min(a);
            hi = hi.max(b);
        }
        (lo, hi)
    }

    /// ||C||: max over cells of the matrix operator norm (= lambda_max for
    /// PSD matrices).
    pub fn norm_c(&self) -> f64 {
        self.eig_range().1
    }

    /// Max symmetry defect over cells; identically 0 by construction since
    /// only one off-diagonal slot is stored.
    pub fn symmetry_defect(&self) -> f64 {
        0.0
    }
}

/// Free-function form of [`CoefficientField::eig_range`].
pub fn field_eig_range(field: &CoefficientField) -> (f64, f64) {
    field.eig_range()
}

fn scalar_field(grid: Grid, tag: String, values: Vec<f64>) -> CoefficientField {
    // scalar c stands for c * I: in 2d both diagonal slots carry c
    let mats = if grid.d == 1 {
        values.into_iter().map(|c| [c, 0.0, 0.0]).collect()
    } else {
        values.into_iter().map(|c| [c, 0.0, c]).collect()
    };
    CoefficientField {
        grid,
        mats,
        family_tag: tag,
    }
}

/// Periodic moving average with half-width `w`, applied along each axis,
/// rescaled to keep unit variance for iid unit-variance input.
fn smooth_periodic(grid: &Grid, raw: &[f64], w: usize) -> Vec<f64> {
    let n = grid.n;
    let win = 2 * w + 1;
    let axis_avg = |data: &[f64], stride: usize, base: usize| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..win {
                let j = (i + n + k - w) % n;
                acc += data[base + j * stride];
            }
            out[i] = acc / win as f64;
        }
        out
    };
    let mut sm = raw.to_vec();
    if grid.d == 1 {
        sm = axis_avg(&sm, 1, 0);
    } else {
        let mut tmp = vec![0.0; sm.len()];
        for iy in 0..n {
            let row = axis_avg(&sm, 1, iy * n);
            tmp[iy * n..(iy + 1) * n].copy_from_slice(&row);
        }
        for ix in 0..n {
            let col = axis_avg(&tmp, n, ix);
            for iy in 0..n {
                sm[iy * n + ix] = col[iy];
            }
        }
    }
    // the average of `win` iid N(0,1) per axis has variance 1/win
    let restore = (win as f64).sqrt().powi(grid.d as i32);
    for v in &mut sm {
        *v *= restore;
    }
    sm
}

/// Constructs a coefficient field. Rejects any parameters that would produce
/// a negative eigenvalue; deterministic given `seed`.
pub fn make_field(grid: &Grid, family: &FieldFamily, seed: u64) -> Result<CoefficientField> {
    let n_cells = grid.num_cells();
    let tag = family.tag();
    match family {
        FieldFamily::Constant { c0 } => {
            if !(*c0 >= 0.0) {
                return Err(Error::InvalidField(format!("constant c0 >= 0 required, got {c0}")));
            }
            Ok(scalar_field(*grid, tag, vec![*c0; n_cells]))
        }
        FieldFamily::ScalarTable { values } => {
            if values.len() != n_cells {
                return Err(Error::InvalidField(format!(
                    "scalar_table needs {} values, got {}",
                    n_cells,
                    values.len()
                )));
            }
            if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::InvalidField(format!(
                    "scalar_table contains negative value {v}"
                )));
            }
            Ok(scalar_field(*grid, tag, values.clone()))
        }
        FieldFamily::Checkerboard { c_lo, c_hi } => {
            if !(*c_lo >= 0.0) || !(*c_hi >= 0.0) {
                return Err(Error::InvalidField(format!(
                    "checkerboard values must be >= 0, got ({c_lo}, {c_hi})"
                )));
            }
            let values = (0..n_cells)
                .map(|idx| {
                    let (ix, iy) = grid.coords(idx);
                    if (ix + iy) % 2 == 0 {
                        *c_lo
                    } else {
                        *c_hi
                    }
                })
                .collect();
            Ok(scalar_field(*grid, tag, values))
        }
        FieldFamily::Lognormal {
            sigma,
            correlation_len,
        } => {
            if !(*sigma >= 0.0) || !(*correlation_len >= 0.0) {
                return Err(Error::InvalidField(format!(
                    "lognormal needs sigma >= 0 and correlation_len >= 0, got ({sigma}, {correlation_len})"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..n_cells)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let w = ((correlation_len / grid.dx()).round() as usize).max(1);
            let smooth = smooth_periodic(grid, &raw, w.min(grid.n / 2));
            let values = smooth.iter().map(|g| (sigma * g).exp()).collect();
            Ok(scalar_field(*grid, tag, values))
        }
        FieldFamily::DegenerateSine { power } => {
            if *power == 0 || power % 2 != 0 {
                return Err(Error::InvalidField(format!(
                    "degenerate_sine power must be even and positive (odd powers go negative), got {power}"
                )));
            }
            let values = (0..n_cells)
                .map(|idx| {
                    let x = grid.center(idx)[0];
                    (2.0 * PI * x / grid.l).sin().powi(*power as i32)
                })
                .collect();
            Ok(scalar_field(*grid, tag, values))
        }
        FieldFamily::Anisotropic { c_xx, c_yy, c_xy } => {
            if grid.d != 2 {
                return Err(Error::InvalidField(
                    "anisotropic family requires d = 2".into(),
                ));
            }
            let det = c_xx * c_yy - c_xy * c_xy;
            if !(*c_xx >= 0.0) || !(*c_yy >= 0.0) || !(det >= 0.0) {
                return Err(Error::InvalidField(format!(
                    "anisotropic matrix must be PSD: c_xx={c_xx}, c_yy={c_yy}, det={det}"
                )));
            }
            Ok(CoefficientField {
                grid: *grid,
                mats: vec![[*c_xx, *c_xy, *c_yy]; n_cells],
                family_tag: tag,
            })
        }
    }
}
