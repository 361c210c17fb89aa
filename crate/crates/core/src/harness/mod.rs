//! Experiment harness: JSON scenario documents, the fixed-rate closed-loop
//! runner, response indicators, world-frame path guidance, and result
//! export (telemetry CSV + metrics/echo JSON).
//!
//! The runner integrates the nonlinear plant at 1 kHz while the controllers
//! update at 50 Hz with zero-order-held torques; every run is deterministic
//! per (scenario, seed) down to the exported bytes.

mod export;
mod guidance;
mod metrics;
mod runner;
mod scenario;

pub use export::{export_results, parse_csv, read_scenario, write_csv};
pub use guidance::{guidance_step, wrap_angle, GuidanceGains, Pose, ReferencePoint, TrajectoryRef};
pub use metrics::{
    compute_metrics, segment, Metrics, MetricsConfig, Record, ResponseKind, TrackedChannel,
};
pub use runner::{run_scenario, PathStats, ScenarioResult, PLANT_DT, T_S};
pub use scenario::{AxisController, PlantOverrides, Profile, Scenario, Step, TrajectorySpec};

use crate::controllers::ControllerError;
use crate::dynamics::DynamicsError;

/// Errors from scenario handling, simulation, and result IO.
#[derive(Debug)]
pub enum HarnessError {
    /// The scenario document is structurally valid JSON but semantically
    /// unusable.
    BadScenario { reason: String },
    /// Controller construction failed (bad configuration).
    Controller(ControllerError),
    /// The plant integrator rejected the parameter set.
    Dynamics(DynamicsError),
    /// Filesystem failure, with the path that caused it.
    Io {
        path: String,
        source: std::io::Error,
    },
    /// A result or scenario file did not parse.
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::BadScenario { reason } => write!(f, "invalid scenario: {reason}"),
            HarnessError::Controller(e) => write!(f, "controller setup failed: {e}"),
            HarnessError::Dynamics(e) => write!(f, "plant integration failed: {e}"),
            HarnessError::Io { path, source } => write!(f, "{path}: {source}"),
            HarnessError::Parse { path, line, reason } => {
                write!(f, "{path}:{line}: {reason}")
            }
        }
    }
}

impl std::error::Error for HarnessError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            HarnessError::Controller(e) => Some(e),
            HarnessError::Dynamics(e) => Some(e),
            HarnessError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<ControllerError> for HarnessError {
    fn from(e: ControllerError) -> Self {
        HarnessError::Controller(e)
    }
}

impl From<DynamicsError> for HarnessError {
    fn from(e: DynamicsError) -> Self {
        HarnessError::Dynamics(e)
    }
}
