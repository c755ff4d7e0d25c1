//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NscaError>;

#[derive(Debug, Error)]
pub enum NscaError {
    #[error("empty signal")]
    EmptySignal,
    #[error("signal contains non-finite samples")]
    NonFinite,
    #[error("empty epoch set")]
    EmptyEpochSet,
    #[error("window of {window} samples exceeds signal length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("matrix dimensions do not match: {0}")]
    DimensionMismatch(String),
    #[error("matrix B is singular or too ill-conditioned even after regularization")]
    SingularB,
    #[error("epoch sets have different horizons: {0} vs {1}")]
    HorizonMismatch(usize, usize),
    #[error("total vote weight is zero")]
    ZeroTotalWeight,
    #[error("signal is degenerate (identically zero)")]
    DegenerateSignal,
    #[error("predicted innovation variance is not positive at sample {0}")]
    NonpositivePredictedVariance(usize),
    #[error("no peaks found")]
    NoPeaksFound,
    #[error("at least {needed} peaks required, got {got}")]
    TooFewPeaks { needed: usize, got: usize },
    #[error("every selected detector produced fewer epochs than channels")]
    InsufficientEpochs,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing sampling rate metadata line")]
    MissingSamplingRate,
}

impl NscaError {
    /// Stable machine-readable kind string, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            NscaError::EmptySignal => "EmptySignal",
            NscaError::NonFinite => "NonFinite",
            NscaError::EmptyEpochSet => "EmptyEpochSet",
            NscaError::WindowTooLarge { .. } => "WindowTooLarge",
            NscaError::DimensionMismatch(_) => "DimensionMismatch",
            NscaError::SingularB => "SingularB",
            NscaError::HorizonMismatch(_, _) => "HorizonMismatch",
            NscaError::ZeroTotalWeight => "ZeroTotalWeight",
            NscaError::DegenerateSignal => "DegenerateSignal",
            NscaError::NonpositivePredictedVariance(_) => "NonpositivePredictedVariance",
            NscaError::NoPeaksFound => "NoPeaksFound",
            NscaError::TooFewPeaks { .. } => "TooFewPeaks",
            NscaError::InsufficientEpochs => "InsufficientEpochs",
            NscaError::InvalidParameter(_) => "InvalidParameter",
            NscaError::Io(_) => "Io",
            NscaError::Parse(_) => "Parse",
            NscaError::MissingSamplingRate => "MissingSamplingRate",
        }
    }
}
