use thiserror::Error;

use crate::model::PllState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// The factor `1 - kp*xg*isd/omega_s` fell below the singularity guard.
    #[error("singular PLL denominator {value:.6} (guard {guard})")]
    SingularDenominator { value: f64, guard: f64 },

    #[error("no equilibrium: |U0| = {u0:.6} >= Ug = {ug:.6}")]
    NoEquilibrium { u0: f64, ug: f64 },

    #[error("pre-fault stage has no equilibrium: |U0| = {u0:.6} >= Ug = {ug:.6}")]
    NoPrefaultEquilibrium { u0: f64, ug: f64 },

    #[error("non-positive per-unit base: {0}")]
    NonPositiveBase(&'static str),

    #[error("clearing the faulted circuit leaves no sending-cable circuit in service")]
    NoRemainingCircuit,

    #[error("angle {delta:.6} rad lies beyond the post-fault critical angle {delta_cr:.6} rad")]
    AngleBeyondCritical { delta: f64, delta_cr: f64 },

    #[error("trajectory ends {available:.3} s after clearing, {required:.3} s required")]
    TrajectoryTooShort { available: f64, required: f64 },

    #[error("{} certified state(s) failed to converge", states.len())]
    CertificationViolation { states: Vec<PllState> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, field: &'static str, reason: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            field,
            reason: reason.into(),
        })
    }
}
