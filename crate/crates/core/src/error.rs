use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("generator kernel has dimension {0}, expected 1")]
    KernelDimension(usize),

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("time {t} outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered at t = {t}: {what}")]
    NonFinite { t: f64, what: String },

    #[error("Hartree kernel is not even (reflection defect {0:e})")]
    NotEven(f64),

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("spectral parameter {0} lies in the open upper half-plane")]
    UpperHalfPlane(num_complex::Complex64),

    #[error("singular or ill-conditioned solve: {0}")]
    Singular(String),

    #[error("time {0} is not a sample time")]
    NotSampled(f64),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("Picard iteration diverged: {0}")]
    Divergence(String),

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
