//! Periodic computational domain: a uniform lattice on the flat torus [0, L)^d.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid in dimension 1 or 2 with `n` cells per axis on a
/// torus of side length `l`. Cell centers sit at (i + 1/2)·dx per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub n: usize,
    pub l: f64,
}

impl Grid {
    /// Builds a grid, rejecting `d` outside {1, 2}, `n < 4`, and `l <= 0`.
    pub fn new(d: usize, n: usize, l: f64) -> Result<Grid> {
        if d != 1 && d != 2 {
            return Err(Error::UnsupportedDimension(d));
        }
        if n < 4 {
            return Err(Error::InvalidGrid(format!("n >= 4 required, got {n}")));
        }
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidGrid(format!("L > 0 required, got {l}")));
        }
        Ok(Grid { d, n, l })
    }

    pub fn dx(&self) -> f64 {
        self.l / self.n as f64
    }

    pub fn cell_vol(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    pub fn num_cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Flat index of a cell from per-axis indices (wrapped periodically).
    /// In 1d only `ix` is used; in 2d the layout is `iy * n + ix`.
    pub fn index(&self, ix: isize, iy: isize) -> usize {
        let n = self.n as isize;
        let ix = ix.rem_euclid(n) as usize;
        if self.d == 1 {
            ix
        } else {
            let iy = iy.rem_euclid(n) as usize;
            iy * self.n + ix
        }
    }

    /// Per-axis indices of a flat cell index.
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        if self.d == 1 {
            (idx, 0)
        } else {
            (idx % self.n, idx / self.n)
        }
    }

    /// Cell center coordinates; the second component is 0 in 1d.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (ix, iy) = self.coords(idx);
        let dx = self.dx();
        [
            (ix as f64 + 0.5) * dx,
            if self.d == 2 { (iy as f64 + 0.5) * dx } else { 0.0 },
        ]
    }

    fn axis_dist(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs() % self.l;
        d.min(self.l - d)
    }

    /// Torus distance between two points: per-axis wraparound, Euclidean combine.
    pub fn torus_dist_points(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.d {
            let d = self.axis_dist(x[i], y[i]);
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Torus distance between two cell centers given by flat index.
    pub fn torus_dist(&self, a: usize, b: usize) -> f64 {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        let dx = self.dx();
        let ddx = self.axis_dist(ax as f64 * dx, bx as f64 * dx);
        if self.d == 1 {
            ddx
        } else {
            let ddy = self.axis_dist(ay as f64 * dx, by as f64 * dx);
            ddx.hypot(ddy)
        }
    }
}
