use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameters for which a closed form has a vanishing denominator.
    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),

    /// Adaptive numerics gave up before reaching the requested tolerance.
    #[error("numeric error: {message} (achieved error estimate {achieved:.3e})")]
    Numeric { message: String, achieved: f64 },

    /// Trial data violating the record invariants.
    #[error("data error: {0}")]
    Data(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    /// The optimiser stopped without converging; the best point found is kept.
    #[error("fit did not converge after {iterations} iterations (best objective {objective:.6e} at {best:?})")]
    Fit {
        iterations: usize,
        objective: f64,
        best: [f64; 2],
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
