use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not Schur (spectral radius {rho})")]
    NotSchur { rho: f64 },

    /// The gain does not stabilize the plant it is evaluated on.
    #[error("gain is not stabilizing (spectral radius of the closed loop {rho})")]
    Stability { rho: f64 },

    #[error("linear system is singular to working precision")]
    Singular,

    #[error("Sylvester equation has overlapping spectra (no unique solution)")]
    SpectraOverlap,

    #[error("eigenvalue iteration did not converge")]
    EigenFailure,

    #[error("Riccati iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonStabilizable { iterations: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("insufficient data: need {needed} samples, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("state diverged at t={t} (|x| = {norm:e})")]
    Divergence { t: usize, norm: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
