use thiserror::Error;

/// Errors produced by the simulation core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("resampling error: {0}")]
    Resampling(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no eigenvalue below the energy cut {energy_cut}")]
    EmptySpectrum { energy_cut: f64 },

    #[error(
        "eigensolver did not converge after {iterations} iterations (worst residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical blow-up at step {step} (t = {t})")]
    NumericalBlowUp { step: usize, t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("run is incomplete: {0}")]
    IncompleteRun(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
