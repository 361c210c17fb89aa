//! Closed-loop scenario execution: nonlinear plant at 1 kHz, controllers at
//! 50 Hz with zero-order-held torques, world pose integrated kinematically.
//! Controllers are always built from nominal parameters; the scenario's
//! plant overrides (mass scaling, friction) stay hidden from them.

use nalgebra::Vector2;

use crate::controllers::{
    default_orientation_config, default_velocity_config, pid_step, OrientationController,
    OrientationMeasurement, PhaseWeights, PidGains, PidState, VelocityController,
    VelocityMeasurement,
};
use crate::dynamics::{plant_step, GeneralizedState, RobotParams};
use crate::harness::guidance::{guidance_step, Pose, TrajectoryRef};
use crate::harness::metrics::{
    compute_metrics, Metrics, MetricsConfig, Record, ResponseKind, TrackedChannel,
};
use crate::harness::scenario::{AxisController, Profile, Scenario};
use crate::harness::HarnessError;
use crate::mlp::MLPParams;

/// Controller update period (s).
pub const T_S: f64 = 0.02;
/// Plant integration step (s).
pub const PLANT_DT: f64 = 1e-3;

/// World-frame tracking summary for trajectory scenarios.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathStats {
    /// Time of the first quarter revolution of the reference (s).
    pub quarter_time: f64,
    /// Largest distance to the path from that time onward (m).
    pub max_error_after_quarter: f64,
    /// Distance to the path at the end of the episode (m).
    pub final_error: f64,
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub seed: u64,
    pub records: Vec<Record>,
    pub velocity_metrics: Metrics,
    pub roll_metrics: Metrics,
    /// Control cycles in which each axis fell back to its fail-safe torque
    /// instead of a fresh solution: [velocity, roll].
    pub solver_failures: [u64; 2],
    /// Present for trajectory scenarios only.
    pub path: Option<PathStats>,
}

enum VelocityLoop {
    Pid { gains: PidGains, state: PidState },
    Mpc(Box<VelocityController>),
}

enum RollLoop {
    Pid { gains: PidGains, state: PidState },
    Mpc(Box<OrientationController>),
}

fn build_velocity_loop(
    choice: &AxisController,
    nominal: &RobotParams,
) -> Result<VelocityLoop, HarnessError> {
    match choice {
        AxisController::Pid { gains } => Ok(VelocityLoop::Pid {
            gains: *gains,
            state: PidState::default(),
        }),
        AxisController::Mpc => Ok(VelocityLoop::Mpc(Box::new(VelocityController::new(
            nominal,
            default_velocity_config(nominal),
            T_S,
        )?))),
        AxisController::MpcFixed { .. } => Err(HarnessError::BadScenario {
            reason: "fixed-phase mode applies to the roll axis only".into(),
        }),
    }
}

fn build_roll_loop(
    choice: &AxisController,
    nominal: &RobotParams,
    mlp: &MLPParams,
) -> Result<RollLoop, HarnessError> {
    let mpc = |fixed| -> Result<RollLoop, HarnessError> {
        let mut c = OrientationController::new(
            nominal,
            mlp.clone(),
            PhaseWeights::default(),
            default_orientation_config(nominal),
            T_S,
        )?;
        c.set_fixed_phase(fixed);
        Ok(RollLoop::Mpc(Box::new(c)))
    };
    match choice {
        AxisController::Pid { gains } => Ok(RollLoop::Pid {
            gains: *gains,
            state: PidState::default(),
        }),
        AxisController::Mpc => mpc(None),
        AxisController::MpcFixed { phase } => mpc(Some(*phase)),
    }
}

fn response_kind(profile: &Profile) -> (ResponseKind, f64) {
    match profile {
        Profile::Constant { .. } | Profile::Steps { .. } => (ResponseKind::Step, 0.0),
        Profile::Sine { start, .. } => (ResponseKind::Continuous, *start),
    }
}

/// Run one scenario to completion. The seed is recorded for provenance;
/// the loop itself is deterministic. Controller-side failures never abort
/// the run — the fail-safe torque is applied and the cycle is counted.
pub fn run_scenario(
    scenario: &Scenario,
    seed: u64,
    mlp: &MLPParams,
) -> Result<ScenarioResult, HarnessError> {
    scenario
        .validate()
        .map_err(|reason| HarnessError::BadScenario { reason })?;

    let nominal = RobotParams::default();
    let plant = nominal.with_mass_scale(scenario.plant.mass_scale);
    let friction = scenario.plant.friction;

    let mut velocity_loop = build_velocity_loop(&scenario.velocity_controller, &nominal)?;
    let mut roll_loop = build_roll_loop(&scenario.orientation_controller, &nominal, mlp)?;

    let traj = scenario.trajectory.as_ref().map(TrajectoryRef::new);
    let guidance_gains = scenario.trajectory.as_ref().map(|t| t.gains);

    let mut state = GeneralizedState::default();
    let mut pose = match &traj {
        Some(t) => {
            let r0 = t.at(0.0);
            Pose {
                x: r0.x,
                y: r0.y,
                psi: r0.psi,
            }
        }
        None => Pose {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
        },
    };

    let n_cycles = (scenario.duration / T_S).round().max(1.0) as usize;
    let substeps = (T_S / PLANT_DT).round() as usize;
    let mut records = Vec::with_capacity(n_cycles);
    let mut solver_failures = [0u64; 2];
    let mut path_max_after_quarter: f64 = 0.0;
    let quarter_time = scenario
        .trajectory
        .as_ref()
        .map(|t| std::f64::consts::FRAC_PI_2 / t.omega.abs());

    for k in 0..n_cycles {
        let t = k as f64 * T_S;

        let (v_d, phi_d) = match (&traj, &guidance_gains) {
            (Some(traj), Some(gains)) => guidance_step(traj, gains, &pose, t, plant.r),
            _ => (
                scenario.v_profile.value(t),
                scenario.phi_profile.value(t),
            ),
        };

        let tau1 = match &mut velocity_loop {
            VelocityLoop::Pid { gains, state: pid } => {
                pid_step(gains, pid, v_d, state.v(), T_S)
            }
            VelocityLoop::Mpc(c) => {
                let y = VelocityMeasurement {
                    alpha: state.alpha(),
                    alpha_rate: state.alpha_dot(),
                    velocity: state.v(),
                };
                match c.step(v_d, &y) {
                    Ok(cmd) => {
                        if !cmd.solved {
                            solver_failures[0] += 1;
                        }
                        cmd.tau
                    }
                    Err(_) => {
                        solver_failures[0] += 1;
                        c.last_torque()
                    }
                }
            }
        };

        let (tau2, phase_label) = match &mut roll_loop {
            RollLoop::Pid { gains, state: pid } => {
                (pid_step(gains, pid, phi_d, state.phi(), T_S), "none")
            }
            RollLoop::Mpc(c) => {
                let y = OrientationMeasurement {
                    beta: state.beta(),
                    beta_rate: state.beta_dot(),
                    phi: state.phi(),
                    phi_rate: state.phi_dot(),
                };
                match c.step(phi_d, state.v(), &y) {
                    Ok(cmd) => {
                        if !cmd.solved {
                            solver_failures[1] += 1;
                        }
                        (cmd.tau, cmd.phase.label())
                    }
                    Err(_) => {
                        solver_failures[1] += 1;
                        (c.last_torque(), "none")
                    }
                }
            }
        };

        records.push(Record {
            t,
            v: state.v(),
            v_d,
            alpha: state.alpha(),
            beta: state.beta(),
            theta: state.x() / plant.r,
            phi: state.phi(),
            phi_d,
            tau1,
            tau2,
            i1: tau1 / plant.k_t,
            i2: tau2 / plant.k_t,
            phase: phase_label.to_string(),
        });

        let tau = Vector2::new(tau1, tau2);
        for _ in 0..substeps {
            pose.psi += state.v() * state.phi().tan() / plant.r * PLANT_DT;
            pose.x += state.v() * pose.psi.cos() * PLANT_DT;
            pose.y += state.v() * pose.psi.sin() * PLANT_DT;
            state = plant_step(&plant, &friction, &state, &tau, PLANT_DT)?;
        }

        if let (Some(traj), Some(q)) = (&traj, quarter_time) {
            let end = t + T_S;
            if end >= q {
                path_max_after_quarter =
                    path_max_after_quarter.max(traj.path_error(pose.x, pose.y));
            }
        }
    }

    let (v_kind, v_window) = response_kind(&scenario.v_profile);
    let (r_kind, r_window) = response_kind(&scenario.phi_profile);
    let velocity_cfg = MetricsConfig {
        response: if traj.is_some() {
            ResponseKind::Step
        } else {
            v_kind
        },
        window_start: v_window,
        ..MetricsConfig::velocity_step(plant.r)
    };
    let roll_cfg = MetricsConfig {
        channel: TrackedChannel::Roll,
        response: if traj.is_some() {
            ResponseKind::Continuous
        } else {
            r_kind
        },
        window_start: r_window,
        ..MetricsConfig::velocity_step(plant.r)
    };

    let path = traj.map(|t| PathStats {
        quarter_time: quarter_time.unwrap(),
        max_error_after_quarter: path_max_after_quarter,
        final_error: t.path_error(pose.x, pose.y),
    });
    let velocity_metrics = compute_metrics(&records, &velocity_cfg);
    let roll_metrics = compute_metrics(&records, &roll_cfg);

    Ok(ScenarioResult {
        scenario: scenario.clone(),
        seed,
        records,
        velocity_metrics,
        roll_metrics,
        solver_failures,
        path,
    })
}
