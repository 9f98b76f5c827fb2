use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Kalman rank condition fails: controllable subspace has dimension {rank} < {dim}")]
    KalmanFailure { rank: usize, dim: usize },
    #[error("input matrix B has rank {rank} < {cols} columns")]
    RankDeficientB { rank: usize, cols: usize },
    #[error("step {step} exceeds interval length {len}")]
    StepTooLarge { step: f64, len: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("spherical measure is degenerate: min ratio {ratio:e}")]
    Degenerate { ratio: f64 },
    #[error("jump cutoff {eps} too large for dt {dt}")]
    CutoffTooLarge { eps: f64, dt: f64 },
    #[error("frequency grid too small: {0}")]
    GridTooSmall(String),
    #[error("time {0} is too small to resolve")]
    SingularTime(f64),
    #[error("finite-difference step {0:e} underflows")]
    StepUnderflow(f64),
    #[error("uniform ellipticity violated at t = {t}: eigenvalue {eig}")]
    UEViolation { t: f64, eig: f64 },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
