//! Finite element solver and verification laboratory for the linear and
//! physically nonlinear relaxed micromorphic model.
//!
//! The state is a pair `(u, P)` with the displacement `u` discretized by
//! vector-valued P1 Lagrange elements and the microdistortion tensor `P`
//! by three rows of lowest-order edge elements of the first kind. On top of
//! the solver sit the verification tools: inner-variation diffeomorphisms
//! with their Piola/covariant pullbacks, discrete Helmholtz decomposition,
//! an incompatible-Korn-constant eigensolver and Besov difference-quotient
//! regularity probes.

pub mod analysis;
pub mod config;
pub mod energy;
pub mod fespace;
pub mod geometry;
pub mod quadrature;
pub mod runner;
pub mod solve;
pub mod sparse;
pub mod transform;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {0:?} is not on the domain boundary")]
    NotOnBoundary([f64; 3]),
    #[error("point {0:?} lies outside the domain")]
    PointOutsideDomain([f64; 3]),
    #[error("coefficient tensor not positive definite at sampled point {0:?}")]
    NonPositiveCoefficient([f64; 3]),
    #[error("iterative method failed to converge within {0} iterations (residual {1:.3e})")]
    NoConvergence(usize, f64),
    #[error("line search stalled at iteration {0}")]
    LineSearchStall(usize),
    #[error("convexity gap non-positive ({0:.3e}); modeling or assembly bug")]
    NonPositiveGap(f64),
    #[error("a-priori ratio undefined for zero loads")]
    ZeroLoad,
    #[error("interior region Omega_eta contains no sample point (eta = {0})")]
    EmptyInteriorRegion(f64),
    #[error("field is degenerate (vanishing differences); regularity index undefined")]
    DegenerateField,
    #[error("config error: {0}")]
    ConfigError(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
