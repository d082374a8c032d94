use thiserror::Error;

/// Errors raised by the library. `category` maps each variant onto the
/// CLI exit-code classes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-stationary feedback: spectral radius {radius:.6} >= 1")]
    NonStationary { radius: f64 },

    #[error("insufficient history: need {needed} past returns, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("length mismatch: expected {expected}, got {got} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid bar: {0}")]
    InvalidBar(String),

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("singular correlation: {0}")]
    SingularCorrelation(String),

    #[error("insufficient bins: max lag {max_lag} needs more than {bins_per_day} bins per day")]
    InsufficientBins { max_lag: usize, bins_per_day: usize },

    #[error("curve fit diverged from every starting point")]
    FitDiverged,

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NonSymmetric(f64),

    #[error("singular system: condition number {cond:.3e} exceeds limit")]
    SingularSystem { cond: f64 },

    #[error("calibration step order violated: {0}")]
    StepOrder(String),

    #[error("non-positive intensity {value:.3e} at index {index}")]
    NonPositiveIntensity { index: usize, value: f64 },

    #[error("degenerate factor: zero variance")]
    DegenerateFactor,

    #[error("negative intensity clamped on {clamped} of {candidates} candidates (limit 1%)")]
    TooManyClamps { clamped: u64, candidates: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NonStationary { .. }
            | Error::FitDiverged
            | Error::SingularSystem { .. }
            | Error::SingularCorrelation(_)
            | Error::NonPositiveIntensity { .. }
            | Error::DegenerateFactor
            | Error::TooManyClamps { .. } => ErrorCategory::Numerical,
            Error::StepOrder(_) | Error::InvalidInput(_) | Error::LengthMismatch { .. } => {
                ErrorCategory::Config
            }
            Error::InsufficientHistory { .. }
            | Error::InvalidBar(_)
            | Error::ZeroDenominator(_)
            | Error::InsufficientBins { .. }
            | Error::NonSymmetric(_)
            | Error::Parse(_)
            | Error::Io(_)
            | Error::Csv(_) => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
