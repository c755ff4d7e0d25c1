//! Nonstationary component analysis (NSCA) for multichannel biosignals.
//!
//! The crate detects temporally nonstationary epochs in multichannel
//! recordings (local power envelope and Kalman-innovation indexes), fuses the
//! epoch labels, and separates sources by GEVD or approximate joint
//! diagonalization of covariance matrices targeted at those epochs. The
//! end-to-end pipeline is instantiated for noninvasive fetal ECG extraction,
//! with a synthetic-mixture generator and R-peak/heart-rate metrics for
//! evaluation.

pub mod detectors;
pub mod ecg;
pub mod eig;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod io;
pub mod pipeline;
pub mod signal;

pub use error::{NscaError, Result};
pub use signal::{EpochSet, MultichannelSignal, SymmetricMatrix};
