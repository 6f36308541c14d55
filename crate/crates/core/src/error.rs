use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("invalid eigenvalues: {0}")]
    InvalidEigenvalues(String),

    #[error("sigma*sigma^T is singular (smallest eigenvalue {min_eig:e})")]
    SingularSigma { min_eig: f64 },

    #[error("unknown drift model `{0}`")]
    UnknownDrift(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },

    #[error("delay tau={tau} is not an integer multiple of dt={dt}")]
    MisalignedDelay { tau: f64, dt: f64 },

    #[error("horizon T={horizon} must exceed the delay tau={tau}")]
    HorizonTooShort { horizon: f64, tau: f64 },

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("drift matrix is not Hurwitz (max real part {0})")]
    NotHurwitz(f64),

    #[error("partial buffers overlap or leave a gap at path index {0}")]
    BadRanges(u64),

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

pub type Result<T> = std::result::Result<T, Error>;
