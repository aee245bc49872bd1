use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left is {}x{}, right is {}x{}", left.0, left.1, right.0, right.1)]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} did not converge after {iterations} iterations (estimate {estimate:e}, residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        estimate: f64,
        residual: f64,
    },

    #[error("fixed-point solve did not converge after {iterations} iterations; residual trace tail {trace_tail:?}")]
    SolverDiverged { iterations: usize, trace_tail: Vec<f64> },

    #[error("contraction condition violated: ||W||_inf = {w_inf} times ||A||_op = {opnorm} is not below 1")]
    ContractionViolated { w_inf: f64, opnorm: f64 },

    #[error("pre-activation within {margin:e} of the ReLU kink (min |p| = {min_abs:e}); re-seed the instance")]
    KinkProximity { margin: f64, min_abs: f64 },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite(_)
            | Error::NotConverged { .. }
            | Error::SolverDiverged { .. }
            | Error::ContractionViolated { .. }
            | Error::KinkProximity { .. } => true,
            Error::Epoch { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
