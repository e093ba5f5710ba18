use thiserror::Error;

/// Errors raised by the solver suite.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Array length does not match the index set it should live on.
    #[error("shape mismatch for {what}: expected {expected} entries, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A matrix that must be symmetric positive definite is not.
    #[error("metric is not positive definite at cell {cell}: min eigenvalue {min_eig}")]
    NotSpd { cell: usize, min_eig: f64 },

    /// An inner iteration failed to reach its tolerance.
    #[error("{what} did not converge (last iterate {last})")]
    Convergence { what: &'static str, last: f64 },

    /// Right-hand side of a singular Neumann problem has a nonzero mean.
    #[error("incompatible right-hand side: zero mode {zero_mode:e} exceeds {bound:e}")]
    Incompatible { zero_mode: f64, bound: f64 },

    /// Malformed external data (kernels, maps, density files).
    #[error("ingestion error: {0}")]
    Ingest(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            got,
        })
    }
}
