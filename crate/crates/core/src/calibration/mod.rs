//! Calibration of the dealer pricing block by simulated method of moments.

pub mod moments;
pub mod nelder_mead;
pub mod smm;
pub mod sobol;

pub use moments::{compute_moments, compute_moments_pooled, MomentEstimate, MomentVector, Segment};
pub use smm::{calibrate, simulate_moments, smm_objective, synthetic_targets, CalibrationResult, SmmConfig, Targets};
