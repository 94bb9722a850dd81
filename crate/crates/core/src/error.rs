//! Crate-wide error type.
//!
//! Variants are grouped by the stage that produced them so binaries can map
//! them onto coarse exit codes (configuration vs. geometry vs. solver).

use thiserror::Error;

/// All failures surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file, sidecar metadata, or value outside its domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// Geometry that cannot be analyzed (empty domain, window larger than the
    /// image, boundary condition inapplicable to the boundary at hand, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Discretization parameters that do not fit the image (non-divisible
    /// dimensions, unsupported polynomial degree, ...).
    #[error("mesh error: {0}")]
    Mesh(String),

    /// Contradictory or cyclic linear constraints.
    #[error("constraint error: {0}")]
    Constraint(String),

    /// A cache or matrix would exceed the configured memory budget.
    #[error("memory budget exceeded: {required_bytes} bytes required, cap is {cap_bytes} bytes")]
    Memory { required_bytes: u64, cap_bytes: u64 },

    /// Iterative solver failed to reach the requested tolerance.
    #[error(
        "solver did not converge: relative residual {residual:.3e} after {iterations} iterations \
         (tolerance {tolerance:.3e})"
    )]
    Solver {
        iterations: usize,
        residual: f64,
        tolerance: f64,
        /// Tail of the residual history, for post-mortem diagnostics.
        history: Vec<f64>,
    },

    /// Failure inside one load case of a multi-case run (e.g. one of the six
    /// unit cases of a stiffness identification), tagged with its index.
    #[error("load case {index}: {source}")]
    Case {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
