//! Aggregation and disaggregation toolkit for random-coefficient AR(1) processes.
//!
//! The pipeline: a panel of AR(1) series with random coefficients drawn from a
//! mixture density `phi` on (-1, 1) is aggregated into a long-memory Gaussian
//! process. This crate simulates that process (literal panel aggregation or
//! exact Gaussian synthesis from the limit covariance), computes the exact
//! forward maps (covariance, spectral density, MA(infinity) coefficients), and
//! estimates `phi` back from a single realization via an orthonormal
//! Gegenbauer polynomial expansion.
//!
//! Module layout:
//! - [`special`]: gamma/beta functions, normal distribution helpers
//! - [`quad`]: tanh-sinh quadrature with endpoint-singularity handling
//! - [`gegenbauer`]: orthonormal Gegenbauer basis and Gauss-Jacobi projection
//! - [`mixture`]: mixture-density families and their forward maps
//! - [`simulate`]: panel aggregation and circulant-embedding synthesis
//! - [`estimator`]: the mixture-density estimator and its spectral dual form
//! - [`ma_repr`]: Wold representation, cepstral factorization, tail checks
//! - [`harness`]: Monte-Carlo experiment runner, reports, figure exports

pub mod estimator;
pub mod gegenbauer;
pub mod harness;
pub mod ma_repr;
pub mod mixture;
pub mod quad;
pub mod simulate;
pub mod special;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are machine-readable: callers (notably the experiment harness)
/// match on them to distinguish recoverable per-replication failures from
/// configuration mistakes.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A quadrature rule failed to converge or met a non-finite integrand.
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    /// The sample innovation-variance estimate is not positive, so the
    /// estimator is undefined for this sample.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    /// Gaussian synthesis failed on every available route.
    #[error("synthesis failure: {0}")]
    Synthesis(String),
    /// The input series or sample is too short for the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// Experiment or CLI configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),
    /// File input/output failed.
    #[error("io error: {0}")]
    Io(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
