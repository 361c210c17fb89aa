//! Closed-loop controllers: a velocity loop that pairs an extended state
//! observer with linear MPC for offset-free speed tracking, an orientation
//! loop that relinearizes the transverse model every cycle and schedules its
//! MPC weights over three response phases, and a PID baseline. The two MPC
//! loops act on decoupled sub-models (pitch/x vs lean/roll) and share no
//! state; each controller is a single-owner value advanced once per control
//! period.

mod orientation;
mod phase;
mod pid;
mod velocity;

pub use orientation::{default_orientation_config, steady_roll_torque, OrientationCommand, OrientationController, OrientationMeasurement};
pub use phase::{PhaseTracker, PhaseWeights, ResponsePhase, StageWeights};
pub use pid::{pid_step, PidGains, PidState};
pub use velocity::{default_velocity_config, VelocityCommand, VelocityController, VelocityMeasurement};

use crate::dynamics::DynamicsError;
use crate::eso::EsoError;
use crate::qp::QPError;

/// Construction or structural failure in a controller. Per-cycle solver
/// failures are not errors — they go through the torque fail-safe.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerError {
    Dynamics(DynamicsError),
    Eso(EsoError),
    Qp(QPError),
    /// The steady-state target system is singular for this model.
    DegenerateTarget,
}

impl std::fmt::Display for ControllerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerError::Dynamics(e) => write!(f, "model construction failed: {e}"),
            ControllerError::Eso(e) => write!(f, "observer construction failed: {e}"),
            ControllerError::Qp(e) => write!(f, "mpc problem is ill-posed: {e}"),
            ControllerError::DegenerateTarget => {
                write!(f, "steady-state target system is singular")
            }
        }
    }
}

impl std::error::Error for ControllerError {}

impl From<DynamicsError> for ControllerError {
    fn from(e: DynamicsError) -> Self {
        ControllerError::Dynamics(e)
    }
}

impl From<EsoError> for ControllerError {
    fn from(e: EsoError) -> Self {
        ControllerError::Eso(e)
    }
}

impl From<QPError> for ControllerError {
    fn from(e: QPError) -> Self {
        ControllerError::Qp(e)
    }
}

/// Torque fallback when the QP reports failure: hold the last applied
/// torque while failures are isolated, drop to zero once they persist.
#[derive(Debug, Clone)]
pub(crate) struct FailSafe {
    pub last: f64,
    failures: u32,
}

const FAILURES_BEFORE_SHUTOFF: u32 = 5;

impl FailSafe {
    pub fn new() -> Self {
        FailSafe {
            last: 0.0,
            failures: 0,
        }
    }

    /// Record a successful solve and pass its torque through.
    pub fn accept(&mut self, tau: f64) -> f64 {
        self.failures = 0;
        self.last = tau;
        tau
    }

    /// Record a failed solve: hold the previous torque, or shut off after
    /// enough consecutive failures.
    pub fn reject(&mut self) -> f64 {
        self.failures = self.failures.saturating_add(1);
        if self.failures >= FAILURES_BEFORE_SHUTOFF {
            self.last = 0.0;
        }
        self.last
    }
}
