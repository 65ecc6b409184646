//! Analytic reference values used as oracles by the test and acceptance
//! suites: periodized Gaussian (theta series) heat kernels of the Laplacian.
//! These are independent of the operator/semigroup implementation paths.

use crate::grid::Grid;

/// Theta-series heat kernel of the flat torus at torus distance components
/// `diff` (per-axis absolute differences before wrapping), truncated at
/// |m| <= `images` lattice shifts per axis.
pub fn periodized_gaussian(grid: &Grid, x: usize, y: usize, t: f64, images: i64) -> f64 {
    let xc = grid.center(x);
    let yc = grid.center(y);
    let l = grid.l;
    let axis = |a: f64, b: f64| -> f64 {
        let mut acc = 0.0;
        let d = a - b;
        for m in -images..=images {
            let z = d + m as f64 * l;
            acc += (-z * z / (4.0 * t)).exp();
        }
        acc / (4.0 * std::f64::consts::PI * t).sqrt()
    };
    let mut val = axis(xc[0], yc[0]);
    if grid.d == 2 {
        val *= axis(xc[1], yc[1]);
    }
    val
}
