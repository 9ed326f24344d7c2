//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the state-space kit, the LMI layer and the pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("P and Q share an eigenvalue (Sylvester equation is ill-posed)")]
    SharedSpectrum,

    #[error("matrix is not Schur stable (spectral radius {0} >= 1)")]
    NotSchur(f64),

    #[error("polynomial is not monic")]
    NotMonic,

    #[error("sector bounds require L > m >= 0, got m={m}, l={l}")]
    InvalidSector { m: f64, l: f64 },

    #[error("multiplier structure inadmissible: {0}")]
    InadmissibleStructure(String),

    #[error("A_a has no eigenvalue 1 reachable through B_a; the integrator decomposition does not exist")]
    NoIntegratorMode,

    #[error("integrator pole is canceled: well-posedness determinant {0:.3e} is numerically zero")]
    IntegratorCancellation(f64),

    #[error("evaluation point lies in the spectrum of A")]
    PoleAtEvaluationPoint,

    #[error("standing assumption violated: {0}")]
    StandingAssumption(String),

    #[error("rate is not certifiable: the LMIs are infeasible at rho = 1")]
    NotCertifiable,

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("controller reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("trajectory unusable for rate estimation: {0}")]
    RateEstimation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
