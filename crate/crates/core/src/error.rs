use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("collision: separation {distance:.3e} below tolerance")]
    Collision { distance: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("matrix is not equivariant: commutator norm {norm:.3e}")]
    NotEquivariant { norm: f64 },

    #[error("eigenvalue {eigenvalue:.3e} within the zero threshold (at crossing)")]
    AtCrossing { eigenvalue: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("search failed: {0}")]
    Search(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
