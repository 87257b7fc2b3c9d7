//! Velocity gate: reject a candidate whose implied speed relative to the last
//! accepted estimate exceeds a threshold.
//!
//! After a long data gap Δt is large and almost anything passes; after a wrong
//! jump is accepted, every later true position can look too fast. Both are
//! known weaknesses of this filter and are kept as-is.

use thiserror::Error;

use crate::geometry::{position_error, PositionEstimate};

#[derive(Debug, Error, PartialEq)]
pub enum GateError {
    #[error("candidate timestamp {candidate} precedes last accepted {last}")]
    NonMonotonic { last: f64, candidate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityGateState {
    pub last_estimate: Option<PositionEstimate>,
    /// Meters per second.
    pub max_speed: f64,
}

impl VelocityGateState {
    pub const DEFAULT_MAX_SPEED: f64 = 0.5;

    pub fn new(max_speed: f64) -> Self {
        assert!(max_speed > 0.0, "max_speed must be positive");
        Self {
            last_estimate: None,
            max_speed,
        }
    }

    /// In-place form of [`velocity_gate`].
    pub fn offer(&mut self, candidate: PositionEstimate) -> Result<GateDecision, GateError> {
        let (decision, next) = velocity_gate(self, candidate)?;
        *self = next;
        Ok(decision)
    }
}

impl Default for VelocityGateState {
    fn default() -> Self {
        Self::new(Self::DEFAULT_MAX_SPEED)
    }
}

pub fn velocity_gate(
    state: &VelocityGateState,
    candidate: PositionEstimate,
) -> Result<(GateDecision, VelocityGateState), GateError> {
    let Some(last) = state.last_estimate else {
        return Ok((
            GateDecision::Accept,
            VelocityGateState {
                last_estimate: Some(candidate),
                ..*state
            },
        ));
    };
    let dt = candidate.timestamp - last.timestamp;
    if dt < 0.0 || dt.is_nan() {
        return Err(GateError::NonMonotonic {
            last: last.timestamp,
            candidate: candidate.timestamp,
        });
    }
    // distance / dt <= max_speed, multiplied out so dt = 0 is well defined
    if position_error(&candidate, &last) <= state.max_speed * dt {
        Ok((
            GateDecision::Accept,
            VelocityGateState {
                last_estimate: Some(candidate),
                ..*state
            },
        ))
    } else {
        Ok((GateDecision::Reject, *state))
    }
}
