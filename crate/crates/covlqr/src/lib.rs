//! Direct data-driven LQR with sample-covariance parameterization and
//! uncertainty regularization.
//!
//! The crate covers the full pipeline:
//!
//! - [`control`]: model-based LQR machinery (spectral radius, discrete
//!   Lyapunov and Riccati equations, cost evaluation).
//! - [`data`]: experiment data generation, the data matrices
//!   `(X0, U0, W0, X1)`, sample covariances, and persistency-of-excitation
//!   checks.
//! - [`sysid`]: ordinary least-squares identification and its error
//!   statistics.
//! - [`conic`]: a small conic-programming layer (zero + PSD cones) with an
//!   in-process primal-dual interior-point backend and SDPA file interchange.
//! - [`direct`]: the covariance parameterization `ΦV = [K; I]`, the
//!   robustness regularizer `Tr(VΣVᵀΦ)`, and the regularized SDP synthesis.
//! - [`bench`]: a seeded Monte Carlo harness comparing the regularized
//!   direct design against certainty-equivalence control.
//!
//! # Example
//!
//! ```
//! use covlqr::control::{PenaltyPair, SystemModel};
//! use covlqr::data::{generate_batch, sample_covariances, DataMode};
//! use covlqr::direct::solve_regularized;
//! use nalgebra::DMatrix;
//!
//! let model = SystemModel::benchmark();
//! let penalties = PenaltyPair::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3) * 1e-3).unwrap();
//! let batch = generate_batch(&model, 20, 0.1, DataMode::IidPairs, 7).unwrap();
//! let cov = sample_covariances(&batch);
//! let solution = solve_regularized(&cov, &penalties, 0.1).unwrap();
//! assert!(solution.gain.is_some());
//! ```

pub mod bench;
pub mod conic;
pub mod control;
pub mod data;
pub mod direct;
pub mod sysid;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("eigenvalue computation failed for a {rows}x{cols} matrix")]
    EigenFailure { rows: usize, cols: usize },

    #[error("closed-loop matrix is not Schur stable (spectral radius {rho})")]
    NotStable { rho: f64 },

    #[error("linear system is singular or near-singular: {context}")]
    IllConditioned { context: String },

    #[error("Riccati iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("sample covariance is singular; data is not persistently exciting")]
    SingularPhi,

    #[error("matrix is not symmetric (max asymmetry {max_dev})")]
    NotSymmetric { max_dev: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eig})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("negative regularization weight {lambda} is rejected by the SDP path")]
    NegativeLambda { lambda: f64 },

    #[error("vector length {len} is not a triangular number")]
    BadSvecLength { len: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
