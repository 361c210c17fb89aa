//! Offset-free forward-velocity MPC.
//!
//! One fixed longitudinal model (linearized at rest) drives both the
//! predictor and an extended-state observer. Each cycle the observer's
//! disturbance estimate is folded into the model's affine term, the
//! steady-state (pendulum angle, torque) pair consistent with the target
//! velocity is recomputed on that corrected model, and the MPC tracks the
//! resulting reference. Model mismatch — wrong mass, unmodeled rolling
//! friction — lands in the disturbance estimate instead of as a velocity
//! offset.

use nalgebra::{Complex, DVector, Matrix4, Vector4};

use super::{ControllerError, FailSafe};
use crate::dynamics::{GeneralizedState, RobotParams};
use crate::eso::{
    apply_disturbance, augment, eso_update, AugmentedModel, ObserverState, DEFAULT_OBSERVER_POLE,
};
use crate::linmodel::{Axis, LinearModel};
use crate::qp::{build_prediction, condense, solve_qp, MPCConfig};

/// What the velocity loop is allowed to see: pendulum long-axis angle and
/// rate, and forward velocity. Never plant-internal truth beyond these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityMeasurement {
    pub alpha: f64,
    pub alpha_rate: f64,
    pub velocity: f64,
}

/// One cycle's output: the torque to hold for the next period, and whether
/// it came from a fresh QP solution (`false` means the fail-safe value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand {
    pub tau: f64,
    pub solved: bool,
}

/// Forward-velocity controller: fixed-model MPC with disturbance rejection
/// through an extended-state observer.
#[derive(Debug, Clone)]
pub struct VelocityController {
    /// Longitudinal model linearized at rest; never relinearized.
    model: LinearModel,
    aug: AugmentedModel,
    observer: ObserverState,
    cfg: MPCConfig,
    fail_safe: FailSafe,
    /// Previous optimal sequence, shifted one step as the next warm start.
    prev_solution: Option<DVector<f64>>,
    /// Diagnostic switch: when set, the disturbance estimate is zeroed
    /// every cycle, exposing the steady-state offset the observer removes.
    disturbance_frozen: bool,
}

/// Steady-state pendulum-angle references are confined to the region where
/// the rest-point linearization is still honest.
const MAX_TARGET_ANGLE: f64 = 0.5;

/// Pole of the disturbance state. Its bandwidth (≈ 1 rad/s at the default
/// period) sits below the pendulum's natural frequency.
const DISTURBANCE_POLE: f64 = 0.98;

/// Default weights and horizons for the velocity loop. Velocity error
/// dominates; the pendulum angle is damped enough to avoid swing-through;
/// travel distance is deliberately unweighted (the loop regulates rate, not
/// position, and the predictor's position column is zero anyway).
pub fn default_velocity_config(params: &RobotParams) -> MPCConfig {
    MPCConfig {
        n_p: 50,
        n_c: 8,
        q: Matrix4::from_diagonal(&Vector4::new(5.0, 0.5, 0.0, 50.0)),
        p: Matrix4::from_diagonal(&Vector4::new(5.0, 0.5, 0.0, 50.0)),
        r: 0.1,
        u_min: -params.tau_max,
        u_max: params.tau_max,
        du_max: Some(2.0),
    }
}

/// Steady pendulum angle and torque that hold `v_target` on `model`:
/// the two acceleration rows of ẋ = A·x + B·u + C must vanish at
/// x = [α_ss, 0, ·, v_target]. Uses the continuous-time matrices, so the
/// answer is also an exact fixed point of the forward-Euler discretization.
pub fn steady_state_target(
    model: &LinearModel,
    v_target: f64,
) -> Result<(f64, f64), ControllerError> {
    let (a, b, c) = (&model.a, &model.b, &model.c);
    let m00 = a[(1, 0)];
    let m01 = b[1];
    let m10 = a[(3, 0)];
    let m11 = b[3];
    let r0 = -(a[(1, 3)] * v_target + c[1]);
    let r1 = -(a[(3, 3)] * v_target + c[3]);
    let det = m00 * m11 - m01 * m10;
    if det.abs() < 1e-9 {
        return Err(ControllerError::DegenerateTarget);
    }
    Ok(((m11 * r0 - m01 * r1) / det, (m00 * r1 - m10 * r0) / det))
}

impl VelocityController {
    /// Build the fixed rest-point model, augment its velocity row with a
    /// disturbance state, and place all observer poles at the default
    /// radius.
    pub fn new(params: &RobotParams, cfg: MPCConfig, t_s: f64) -> Result<Self, ControllerError> {
        cfg.validate()?;
        let model = LinearModel::new(
            params,
            Axis::Longitudinal,
            &GeneralizedState::default(),
            0.0,
            t_s,
        )?;
        // Disturbance states on both acceleration rows, matched one-for-one
        // by the measured positions (α, ẋ): with as many disturbance states
        // as measurements the observer's closed-loop fixed point forces the
        // innovation to zero, which is what makes the tracking offset-free
        // rather than merely small. (Measuring the rates instead would make
        // α indistinguishable from the disturbance pair.)
        let aug = augment(&model, &[1, 3], &[0, 3])?;
        // State poles at the default radius; the disturbance poles much
        // slower, below the pendulum resonance, so the estimates average
        // out swing-frequency model error instead of chasing it (the
        // steady-state target map would amplify that chatter into
        // reference oscillation).
        let dim = aug.a_a.nrows();
        let mut poles = vec![Complex::new(DEFAULT_OBSERVER_POLE, 0.0); dim];
        for p in poles.iter_mut().skip(dim - aug.n_d) {
            *p = Complex::new(DISTURBANCE_POLE, 0.0);
        }
        let observer = ObserverState::new(&aug, &poles)?;
        Ok(VelocityController {
            model,
            aug,
            observer,
            cfg,
            fail_safe: FailSafe::new(),
            prev_solution: None,
            disturbance_frozen: false,
        })
    }

    /// Zero the disturbance estimate every cycle (diagnostic; shows the
    /// offset the observer normally removes).
    pub fn freeze_disturbance(&mut self, frozen: bool) {
        self.disturbance_frozen = frozen;
    }

    /// Current state estimate [α̂, α̇̂, v̂].
    pub fn state_estimate(&self) -> &DVector<f64> {
        &self.observer.x_hat
    }

    /// Current lumped-disturbance estimates, one per acceleration row
    /// (pendulum swing, then forward velocity).
    pub fn disturbance_estimate(&self) -> &DVector<f64> {
        &self.observer.d_hat
    }

    /// Torque currently held by the fail-safe (last commanded value).
    pub fn last_torque(&self) -> f64 {
        self.fail_safe.last
    }

    /// One control cycle: correct the observer with this period's
    /// measurement, fold the disturbance into the model, retarget the
    /// steady state, and solve the tracking QP. Infeasible or failed solves
    /// fall back to the previous torque (zero after repeated failures).
    pub fn step(
        &mut self,
        v_target: f64,
        y: &VelocityMeasurement,
    ) -> Result<VelocityCommand, ControllerError> {
        let y_vec = DVector::from_row_slice(&[y.alpha, y.velocity]);
        self.observer = eso_update(&self.observer, &self.aug, self.fail_safe.last, &y_vec)?;
        if self.disturbance_frozen {
            self.observer.d_hat.fill(0.0);
        }

        let disturbed = apply_disturbance(&self.model, &self.aug, &self.observer.d_hat)?;
        let (alpha_ss, u_ss) = steady_state_target(&disturbed, v_target)?;
        // Project the target onto the set the controller can actually hold:
        // torques inside the box, pendulum angle inside the region where
        // the rest-point linearization is trustworthy. Disturbance-estimate
        // transients would otherwise issue wild references.
        let alpha_ss = alpha_ss.clamp(-MAX_TARGET_ANGLE, MAX_TARGET_ANGLE);
        let u_ss = u_ss.clamp(self.cfg.u_min, self.cfg.u_max);

        // Initial state for the prediction: estimated where estimation is
        // load-bearing (α, v — the innovation drives these to the measured
        // values), measured where a direct signal exists (α̇). Predicted
        // travel is relative, so the position entry starts at zero.
        let x0 = Vector4::new(
            self.observer.x_hat[0],
            y.alpha_rate,
            0.0,
            self.observer.x_hat[2],
        );
        let mut x_ref = DVector::zeros(4 * self.cfg.n_p);
        for k in 0..self.cfg.n_p {
            x_ref[4 * k] = alpha_ss;
            x_ref[4 * k + 3] = v_target;
        }
        let u_ref = DVector::from_element(self.cfg.n_c, u_ss);

        let pred = build_prediction(&disturbed, &self.cfg);
        let mut qp = condense(&pred, &self.cfg, &x0, &x_ref, &u_ref)?;
        if let Some(du) = self.cfg.du_max {
            qp.limit_first_step(self.fail_safe.last, du);
        }

        let warm = self.prev_solution.as_ref().map(|prev| {
            let mut w = DVector::zeros(self.cfg.n_c);
            for k in 0..self.cfg.n_c {
                w[k] = prev[(k + 1).min(self.cfg.n_c - 1)];
            }
            w
        });

        match solve_qp(&qp, warm.as_ref()) {
            Ok(sol) => {
                let tau = self.fail_safe.accept(sol.u[0]);
                self.prev_solution = Some(sol.u);
                Ok(VelocityCommand { tau, solved: true })
            }
            Err(_) => {
                self.prev_solution = None;
                Ok(VelocityCommand {
                    tau: self.fail_safe.reject(),
                    solved: false,
                })
            }
        }
    }
}
