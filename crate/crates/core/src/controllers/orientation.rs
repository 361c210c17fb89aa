//! Phase-weighted roll-orientation MPC.
//!
//! Unlike the velocity loop's fixed model, the transverse sub-system is
//! relinearized every cycle at the measured state, with the centripetal
//! force of the current turn folded in as a constant. The reference pair
//! (pendulum side-swing β_d, roll torque u_rd) that balances a steady turn
//! comes from the learned inverse model and the closed-form torque balance.
//! MPC weights switch between response phases — fast approach, overshoot
//! reduction, stabilization — driven by a [`PhaseTracker`], or pinned to a
//! single phase for A/B comparison.

use nalgebra::{DVector, Matrix4, Vector4};

use super::phase::{PhaseTracker, PhaseWeights, ResponsePhase};
use super::{ControllerError, FailSafe};
use crate::dynamics::{centripetal_friction, GeneralizedState, RobotParams};
use crate::linmodel::{Axis, LinearModel};
use crate::mlp::MLPParams;
use crate::qp::{build_prediction, condense, solve_qp, MPCConfig};

/// Measured transverse state: pendulum side-swing and shell roll, with
/// rates. The forward velocity it needs arrives separately each cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationMeasurement {
    pub beta: f64,
    pub beta_rate: f64,
    pub phi: f64,
    pub phi_rate: f64,
}

/// One cycle's output: torque, whether the QP solved, and the response
/// phase whose weights shaped it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationCommand {
    pub tau: f64,
    pub solved: bool,
    pub phase: ResponsePhase,
}

/// Torque that balances a steady turn at speed `v` and roll `phi_d`:
/// with both pendulum and shell at rest in the rolling frame, the input
/// must cancel the centripetal moment M·v²·tan(φ_d).
pub fn steady_roll_torque(params: &RobotParams, v: f64, phi_d: f64) -> f64 {
    centripetal_friction(params, v, phi_d) * params.r
}

/// Roll-orientation controller with per-cycle relinearization and
/// phase-scheduled weights.
#[derive(Debug, Clone)]
pub struct OrientationController {
    params: RobotParams,
    mlp: MLPParams,
    weights: PhaseWeights,
    /// Created on the first cycle (needs the initial angle and target).
    tracker: Option<PhaseTracker>,
    /// Horizons and bounds; q, p, r are overwritten from the active phase.
    cfg: MPCConfig,
    /// When set, the schedule is bypassed and these weights always apply.
    fixed_phase: Option<ResponsePhase>,
    fail_safe: FailSafe,
    prev_solution: Option<DVector<f64>>,
    t_s: f64,
}

/// Default horizons and bounds for the roll loop. The weight matrices here
/// are placeholders — the active phase's weights replace them every cycle.
pub fn default_orientation_config(params: &RobotParams) -> MPCConfig {
    MPCConfig {
        n_p: 40,
        n_c: 8,
        q: Matrix4::identity(),
        p: Matrix4::identity(),
        r: 0.1,
        u_min: -params.tau_max,
        u_max: params.tau_max,
        du_max: Some(2.0),
    }
}

impl OrientationController {
    pub fn new(
        params: &RobotParams,
        mlp: MLPParams,
        weights: PhaseWeights,
        cfg: MPCConfig,
        t_s: f64,
    ) -> Result<Self, ControllerError> {
        params.validate()?;
        cfg.validate()?;
        if !weights.validate() {
            return Err(ControllerError::Qp(crate::qp::QPError::InvalidConfig {
                reason: "phase weights must have positive input weights and PSD state weights",
            }));
        }
        Ok(OrientationController {
            params: params.clone(),
            mlp,
            weights,
            tracker: None,
            cfg,
            fixed_phase: None,
            fail_safe: FailSafe::new(),
            prev_solution: None,
            t_s,
        })
    }

    /// Pin the weight schedule to one phase (for comparing the schedule
    /// against a single fixed tuning). `None` restores the schedule.
    pub fn set_fixed_phase(&mut self, phase: Option<ResponsePhase>) {
        self.fixed_phase = phase;
    }

    /// Replace the weight schedule (retuning between episodes).
    pub fn set_weights(&mut self, weights: PhaseWeights) -> Result<(), ControllerError> {
        if !weights.validate() {
            return Err(ControllerError::Qp(crate::qp::QPError::InvalidConfig {
                reason: "phase weights must have positive input weights and PSD state weights",
            }));
        }
        self.weights = weights;
        Ok(())
    }

    /// Torque currently held by the fail-safe (last commanded value).
    pub fn last_torque(&self) -> f64 {
        self.fail_safe.last
    }

    /// One control cycle: relinearize at the measurement, look up the
    /// steady-turn references, pick the phase weights, and solve the
    /// tracking QP. Failed solves fall back to the previous torque.
    pub fn step(
        &mut self,
        phi_d: f64,
        v: f64,
        y: &OrientationMeasurement,
    ) -> Result<OrientationCommand, ControllerError> {
        let op = GeneralizedState::new(
            Vector4::new(0.0, 0.0, y.beta, y.phi),
            Vector4::new(0.0, v, y.beta_rate, y.phi_rate),
        );
        let friction_est = centripetal_friction(&self.params, v, y.phi);
        let model = LinearModel::new(&self.params, Axis::Transverse, &op, friction_est, self.t_s)?;

        let beta_d = self.mlp.forward(v, phi_d);
        let u_rd = steady_roll_torque(&self.params, v, phi_d);

        let phase = match self.fixed_phase {
            Some(p) => p,
            None => {
                let tracker = self
                    .tracker
                    .get_or_insert_with(|| PhaseTracker::new(y.phi, phi_d));
                tracker.advance(&self.weights, y.phi, y.phi_rate, phi_d, self.t_s)
            }
        };
        let stage = self.weights.stage(phase);
        let mut cfg = self.cfg.clone();
        cfg.q = Matrix4::from_diagonal(&stage.q_diag);
        cfg.p = Matrix4::from_diagonal(&stage.p_diag);
        cfg.r = stage.r;

        let x0 = Vector4::new(y.beta, y.beta_rate, y.phi, y.phi_rate);
        let mut x_ref = DVector::zeros(4 * cfg.n_p);
        for k in 0..cfg.n_p {
            x_ref[4 * k] = beta_d;
            x_ref[4 * k + 2] = phi_d;
        }
        let u_ref = DVector::from_element(cfg.n_c, u_rd);

        let pred = build_prediction(&model, &cfg);
        let mut qp = condense(&pred, &cfg, &x0, &x_ref, &u_ref)?;
        if let Some(du) = cfg.du_max {
            qp.limit_first_step(self.fail_safe.last, du);
        }

        let warm = self.prev_solution.as_ref().map(|prev| {
            let mut w = DVector::zeros(cfg.n_c);
            for k in 0..cfg.n_c {
                w[k] = prev[(k + 1).min(cfg.n_c - 1)];
            }
            w
        });

        match solve_qp(&qp, warm.as_ref()) {
            Ok(sol) => {
                let tau = self.fail_safe.accept(sol.u[0]);
                self.prev_solution = Some(sol.u);
                Ok(OrientationCommand {
                    tau,
                    solved: true,
                    phase,
                })
            }
            Err(_) => {
                self.prev_solution = None;
                Ok(OrientationCommand {
                    tau: self.fail_safe.reject(),
                    solved: false,
                    phase,
                })
            }
        }
    }
}
