use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by grid construction, operator assembly, solvers, and the
/// scenario pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0}: expected 1 or 2")]
    UnsupportedDimension(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("probe radius below grid resolution: r*sqrt(t_max) = {reach:.3e} < dx = {dx:.3e}")]
    RadiusBelowResolution { reach: f64, dx: f64 },

    #[error("insufficient kernel data: {have} admissible points, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("invalid cutoff: {0}")]
    InvalidCutoff(String),

    #[error("invalid scenario field `{field}`: {message}")]
    InvalidScenario { field: String, message: String },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unknown scenario `{0}`: not a readable file and not a gallery entry")]
    UnknownScenario(String),

    #[error("analysis stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
