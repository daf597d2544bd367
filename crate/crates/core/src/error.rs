//! Failure modes shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value failed its validity check before any numerics ran.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Requested time lies outside the loop's [0, T] window.
    #[error("time {t} us outside the loop window [0, {period} us]")]
    TimeOutOfRange { t: f64, period: f64 },

    /// A spectral degeneracy sits so close to the control path that the
    /// enclosed count cannot be trusted.
    #[error("degeneracy within {dist:e} rad/us of the control path; enclosed count ambiguous")]
    BoundaryAmbiguous { dist: f64 },

    /// Conditional evolution retained too little weight to renormalise.
    #[error("post-selection exhausted: probability {prob:e} below {floor:e}")]
    PostSelectionExhausted { prob: f64, floor: f64 },

    /// Density-matrix trace drifted past the safety bound; the step size is
    /// too coarse for the requested evolution.
    #[error("trace drift {drift:e} exceeds {bound:e} at dt = {dt} us; reduce dt")]
    StepSize { drift: f64, dt: f64, bound: f64 },

    /// The two eigenvectors coalesced; a two-mode decomposition does not
    /// exist at this point in parameter space.
    #[error("eigenvectors coalesced; mode decomposition undefined")]
    Coalesced,
}

pub type Result<T> = std::result::Result<T, Error>;
