//! Scenario documents: a JSON-serializable description of one experiment —
//! how long to run, what the plant secretly does (mass error, friction),
//! which controller drives each axis, and the target profiles.

use serde::{Deserialize, Serialize};

use crate::controllers::{PidGains, ResponsePhase};
use crate::dynamics::FrictionConfig;
use crate::harness::guidance::GuidanceGains;

/// One experiment description. The plant overrides are *truth* the
/// controllers never see; controllers are always built from nominal
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Episode length (s).
    pub duration: f64,
    #[serde(default)]
    pub plant: PlantOverrides,
    #[serde(default)]
    pub velocity_controller: AxisController,
    #[serde(default)]
    pub orientation_controller: AxisController,
    /// Forward-velocity target v_d(t) (m/s). Ignored in trajectory mode.
    #[serde(default)]
    pub v_profile: Profile,
    /// Roll target φ_d(t) (rad). Ignored in trajectory mode.
    #[serde(default)]
    pub phi_profile: Profile,
    /// When present, a guidance law generates both targets from the
    /// world-frame reference path instead of the profiles.
    #[serde(default)]
    pub trajectory: Option<TrajectorySpec>,
}

/// Plant-side truth the controllers are not told about.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantOverrides {
    /// Factor applied to every mass and inertia (1.0 = nominal).
    #[serde(default = "default_mass_scale")]
    pub mass_scale: f64,
    #[serde(default)]
    pub friction: FrictionConfig,
}

fn default_mass_scale() -> f64 {
    1.0
}

impl Default for PlantOverrides {
    fn default() -> Self {
        PlantOverrides {
            mass_scale: 1.0,
            friction: FrictionConfig::disabled(),
        }
    }
}

/// Which controller drives an axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum AxisController {
    /// Cascade-free positional PID on the tracked output.
    Pid { gains: PidGains },
    /// The production MPC loop (phase-weighted on the roll axis).
    Mpc,
    /// Roll MPC with the weight schedule pinned to one phase — the
    /// fixed-weight baseline the schedule is compared against.
    MpcFixed { phase: ResponsePhase },
}

impl Default for AxisController {
    fn default() -> Self {
        AxisController::Mpc
    }
}

/// A scalar target as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// Piecewise-constant: the value of the latest step at or before t,
    /// zero before the first step.
    Steps {
        steps: Vec<Step>,
    },
    /// offset + amplitude·sin(omega·t + phase) for t ≥ start, zero before.
    Sine {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        start: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: f64,
    pub value: f64,
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Constant { value: 0.0 }
    }
}

impl Profile {
    /// Target value at time t.
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Steps { steps } => steps
                .iter()
                .rev()
                .find(|s| s.t <= t)
                .map_or(0.0, |s| s.value),
            Profile::Sine {
                amplitude,
                omega,
                phase,
                offset,
                start,
            } => {
                if t < *start {
                    0.0
                } else {
                    offset + amplitude * (omega * t + phase).sin()
                }
            }
        }
    }

    /// Times at which the profile jumps discontinuously (step onsets).
    pub fn step_times(&self) -> Vec<f64> {
        match self {
            Profile::Steps { steps } => steps.iter().map(|s| s.t).collect(),
            _ => Vec::new(),
        }
    }

    fn validate(&self, duration: f64) -> Result<(), String> {
        match self {
            Profile::Constant { value } => {
                if !value.is_finite() {
                    return Err("constant profile value must be finite".into());
                }
            }
            Profile::Steps { steps } => {
                if steps.is_empty() {
                    return Err("step profile needs at least one step".into());
                }
                for pair in steps.windows(2) {
                    if pair[1].t <= pair[0].t {
                        return Err("step times must be strictly increasing".into());
                    }
                }
                for s in steps {
                    if s.t < 0.0 || s.t > duration {
                        return Err(format!("step time {} outside [0, duration]", s.t));
                    }
                    if !s.value.is_finite() {
                        return Err("step values must be finite".into());
                    }
                }
            }
            Profile::Sine {
                amplitude,
                omega,
                phase,
                offset,
                start,
            } => {
                for (v, what) in [
                    (amplitude, "amplitude"),
                    (omega, "omega"),
                    (phase, "phase"),
                    (offset, "offset"),
                    (start, "start"),
                ] {
                    if !v.is_finite() {
                        return Err(format!("sine profile {what} must be finite"));
                    }
                }
                if *start < 0.0 {
                    return Err("sine profile start must be >= 0".into());
                }
            }
        }
        Ok(())
    }
}

/// A circular world-frame reference path plus the guidance gains that
/// steer the robot along it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    /// Circle radius (m).
    pub radius: f64,
    /// Angular rate of the reference point (rad/s); sign sets direction.
    pub omega: f64,
    /// Circle center (m, m).
    pub center: [f64; 2],
    /// Reference point's angle on the circle at t = 0 (rad).
    #[serde(default)]
    pub start_angle: f64,
    #[serde(default)]
    pub gains: GuidanceGains,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err("duration must be positive and finite".into());
        }
        if self.name.is_empty() {
            return Err("scenario needs a name".into());
        }
        if !(self.plant.mass_scale > 0.0) {
            return Err("mass_scale must be positive".into());
        }
        self.v_profile
            .validate(self.duration)
            .map_err(|e| format!("v_profile: {e}"))?;
        self.phi_profile
            .validate(self.duration)
            .map_err(|e| format!("phi_profile: {e}"))?;
        if let Some(traj) = &self.trajectory {
            if !(traj.radius > 0.0) {
                return Err("trajectory radius must be positive".into());
            }
            if traj.omega == 0.0 || !traj.omega.is_finite() {
                return Err("trajectory omega must be nonzero and finite".into());
            }
            traj.gains.validate()?;
        }
        Ok(())
    }
}
