//! A numerical laboratory for divergence-form elliptic operators
//! H = -div(C grad) with bounded measurable, possibly degenerate,
//! coefficients on a periodic grid. It assembles the discrete operators,
//! computes viscosity semigroups and heat kernels, and tests the equivalence
//! between strong ellipticity, local small-time kernel lower bounds, and
//! two-sided Gaussian (Aronson) envelopes.
//!
//! Modules mirror the pipeline: [`grid`]/[`field`] define the domain and the
//! coefficient data, [`operators`] assembles H and the quadratic forms,
//! [`semigroup`] applies resolvents and exponentials and extracts kernel
//! matrices, [`bounds`] turns the kernel data into executable verdicts, and
//! [`scenario`]/[`report`] orchestrate batch runs with file emission.

pub mod bounds;
pub mod error;
pub mod field;
pub mod grid;
pub mod linalg;
pub mod operators;
pub mod reference;
pub mod report;
pub mod scenario;
pub mod semigroup;
pub mod svg;

pub use error::{Error, Result};
