use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("did not converge: {0}")]
    NoConvergence(String),

    #[error("integrator step size underflow at t = {t:e} s")]
    StepUnderflow { t: f64 },

    #[error("state is expressed in the {state} basis but the generator works in the {frame} frame")]
    FrameMismatch { state: &'static str, frame: &'static str },

    #[error("resonance lines {first} and {second} are {separation_hz:.1} Hz apart, below the {resolution_hz:.1} Hz resolution")]
    ResonanceCollision {
        first: String,
        second: String,
        separation_hz: f64,
        resolution_hz: f64,
    },

    #[error("illegal protocol step {index}: {reason}")]
    IllegalStep { index: usize, reason: String },

    #[error("protocol step {index} failed: {source}")]
    StepFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("readout calibration is degenerate (p(bright|F=0) = {p0}, p(bright|F=1) = {p1})")]
    DegenerateCalibration { p0: f64, p1: f64 },

    #[error("tomography design matrix is singular")]
    SingularDesign,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
