use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} of size {n} exceeds the dense cap of {cap}")]
    DenseCapExceeded { what: &'static str, n: usize, cap: usize },

    #[error("{0} requires a symmetric Laplacian (random-walk Laplacian is asymmetric)")]
    AsymmetricLaplacian(&'static str),

    #[error(
        "eigensolver did not converge after {restarts} restarts \
         ({converged}/{wanted} pairs locked, worst residual {worst_residual:e})"
    )]
    NonConvergence {
        restarts: usize,
        wanted: usize,
        converged: usize,
        worst_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("iteration diverged at step {iteration} (norm {norm:e})")]
    Diverged { iteration: usize, norm: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("config error at line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by the experiment configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_config(),
            other => matches!(other, Error::Config(_) | Error::ConfigLine { .. }),
        }
    }

    /// True for errors raised by a numerical routine (non-convergence, divergence, ...).
    pub fn is_numerical(&self) -> bool {
        if let Error::Context { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::NotPositiveDefinite(_)
                | Error::Singular(_)
                | Error::Diverged { .. }
        )
    }

    /// Wraps `self` with a description of the step that failed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
