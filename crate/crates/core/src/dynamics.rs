//! Whole-body dynamics of a pendulum-driven spherical robot.
//!
//! The robot is a sealed rolling shell actuated by a 2-DOF internal pendulum.
//! Generalized coordinates are q = [α, x, β, φ]: pendulum swing about the
//! lateral axis (drives forward travel x), pendulum swing about the roll axis,
//! and shell roll. The model is block-decoupled into a longitudinal half over
//! (α, x) and a transverse half over (β, φ):
//!
//!   M(q)·q̈ + N(q, q̇) = E·τ,     E·τ = [τ₁, τ₁, τ₂, τ₂]ᵀ
//!
//! This module provides the mass matrix, bias vector (gravity, damping,
//! centrifugal and friction torques), the forward dynamics, both friction
//! models (ground Coulomb+viscous on x, centripetal on the roll axis), a
//! deterministic RK4 plant integrator, and the mechanical energy used by the
//! conservation self-test.

use nalgebra::{Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Index of α (pendulum swing, lateral axis) in q.
pub const ALPHA: usize = 0;
/// Index of x (travel distance) in q.
pub const X_POS: usize = 1;
/// Index of β (pendulum swing, roll axis) in q.
pub const BETA: usize = 2;
/// Index of φ (shell roll) in q.
pub const PHI: usize = 3;

/// Physical parameters of the robot. `Default` gives the nominal 30 kg
/// desk-scale configuration used throughout the tests and scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Shell mass (kg).
    pub m_s: f64,
    /// Frame mass (kg).
    pub m_f: f64,
    /// Pendulum mass (kg).
    pub m_p: f64,
    /// Shell moments of inertia about x and y (kg·m²).
    pub i_sx: f64,
    pub i_sy: f64,
    /// Frame moments of inertia about x and y (kg·m²).
    pub i_fx: f64,
    pub i_fy: f64,
    /// Pendulum moments of inertia about x and y (kg·m²).
    pub i_px: f64,
    pub i_py: f64,
    /// Sphere radius (m).
    pub r: f64,
    /// Frame-to-pendulum distance (m).
    pub l: f64,
    /// Viscous damping at the pendulum pivots (N·m·s/rad).
    pub zeta: f64,
    /// Gravity (m/s²).
    pub g: f64,
    /// Motor torque constant (N·m/A), used for the current telemetry map I = τ/k_t.
    pub k_t: f64,
    /// Torque saturation applied at the plant boundary (N·m).
    pub tau_max: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            m_s: 18.0,
            m_f: 7.0,
            m_p: 5.0,
            i_sx: 1.08,
            i_sy: 1.08,
            i_fx: 0.08,
            i_fy: 0.08,
            i_px: 0.25,
            i_py: 0.25,
            r: 0.3,
            l: 0.2,
            zeta: 0.15,
            g: 9.81,
            k_t: 0.5,
            tau_max: 10.0,
        }
    }
}

impl RobotParams {
    /// Total mass M = m_s + m_f + m_p — the scalar M appearing in the mass
    /// matrix and in the centripetal friction model.
    pub fn total_mass(&self) -> f64 {
        self.m_s + self.m_f + self.m_p
    }

    /// Returns a copy with all three masses scaled by `factor` (plant
    /// mismatch knob for the benchmark scenarios).
    pub fn with_mass_scale(&self, factor: f64) -> Self {
        RobotParams {
            m_s: self.m_s * factor,
            m_f: self.m_f * factor,
            m_p: self.m_p * factor,
            ..*self
        }
    }

    /// Basic sanity check: strictly positive masses, inertias and geometry,
    /// nonnegative damping/motor constants.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positives = [
            self.m_s, self.m_f, self.m_p, self.i_sx, self.i_sy, self.i_fx, self.i_fy, self.i_px,
            self.i_py, self.r, self.l,
        ];
        if positives.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(DynamicsError::InvalidParams);
        }
        if self.zeta < 0.0 || self.k_t < 0.0 || self.tau_max < 0.0 || self.g <= 0.0 {
            return Err(DynamicsError::InvalidParams);
        }
        Ok(())
    }
}

/// Full generalized state: q = [α, x, β, φ] and its time derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneralizedState {
    pub q: Vector4<f64>,
    pub qdot: Vector4<f64>,
}

impl GeneralizedState {
    pub fn new(q: Vector4<f64>, qdot: Vector4<f64>) -> Self {
        GeneralizedState { q, qdot }
    }

    pub fn alpha(&self) -> f64 {
        self.q[ALPHA]
    }
    pub fn x(&self) -> f64 {
        self.q[X_POS]
    }
    pub fn beta(&self) -> f64 {
        self.q[BETA]
    }
    pub fn phi(&self) -> f64 {
        self.q[PHI]
    }
    pub fn alpha_dot(&self) -> f64 {
        self.qdot[ALPHA]
    }
    /// Shell velocity ẋ.
    pub fn v(&self) -> f64 {
        self.qdot[X_POS]
    }
    pub fn beta_dot(&self) -> f64 {
        self.qdot[BETA]
    }
    pub fn phi_dot(&self) -> f64 {
        self.qdot[PHI]
    }
}

/// Ground-truth friction configuration for the plant. The controllers never
/// see this; the longitudinal force is exactly what the disturbance observer
/// has to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionConfig {
    /// Coulomb coefficient (dimensionless).
    #[serde(default)]
    pub mu_c: f64,
    /// Viscous ground coefficient (N·s/m).
    #[serde(default)]
    pub c_v: f64,
    /// Apply Coulomb+viscous ground friction on the x axis.
    #[serde(default)]
    pub longitudinal: bool,
    /// Apply the centripetal force on the roll axis.
    #[serde(default)]
    pub transverse: bool,
}

impl FrictionConfig {
    /// No friction anywhere — the ideal plant used by most unit tests.
    pub fn disabled() -> Self {
        FrictionConfig {
            mu_c: 0.0,
            c_v: 0.0,
            longitudinal: false,
            transverse: false,
        }
    }

    /// Longitudinal ground friction force F_fx (N). Coulomb + viscous,
    /// oriented so that the `+F_fx·r` torque in the bias vector opposes the
    /// motion (dissipative); sign(0) = 0 avoids chatter at rest.
    pub fn longitudinal_force(&self, params: &RobotParams, xdot: f64) -> f64 {
        if !self.longitudinal {
            return 0.0;
        }
        let sgn = if xdot > 0.0 {
            1.0
        } else if xdot < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.mu_c * params.total_mass() * params.g * sgn + self.c_v * xdot
    }

    /// Transverse friction force F_fy (N): the centripetal force of the
    /// current turn, zero when disabled.
    pub fn transverse_force(&self, params: &RobotParams, v: f64, phi: f64) -> f64 {
        if !self.transverse {
            return 0.0;
        }
        centripetal_friction(params, v, phi)
    }
}

impl Default for FrictionConfig {
    fn default() -> Self {
        FrictionConfig::disabled()
    }
}

/// One plant sample: everything the telemetry exporter needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Telemetry {
    /// Time (s).
    pub t: f64,
    pub state: GeneralizedState,
    /// Shell pitch θ = x / r (rad).
    pub theta: f64,
    /// θ̇ = ẋ / r (rad/s).
    pub thetadot: f64,
    /// Applied torques [τ₁, τ₂] (N·m), after saturation.
    pub tau: [f64; 2],
    /// Motor currents I = τ / k_t (A).
    pub current: [f64; 2],
    /// Shell velocity ẋ (m/s).
    pub v: f64,
}

impl Telemetry {
    pub fn sample(t: f64, state: GeneralizedState, tau: [f64; 2], params: &RobotParams) -> Self {
        Telemetry {
            t,
            state,
            theta: state.x() / params.r,
            thetadot: state.v() / params.r,
            tau,
            current: [tau[0] / params.k_t, tau[1] / params.k_t],
            v: state.v(),
        }
    }
}

/// Errors from the dynamics layer.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsError {
    /// A 2×2 mass-matrix block is numerically singular — nonphysical parameters.
    SingularMass { det: f64 },
    /// Parameter validation failed.
    InvalidParams,
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsError::SingularMass { det } => {
                write!(f, "mass matrix block is singular (det = {det:e})")
            }
            DynamicsError::InvalidParams => write!(f, "invalid robot parameters"),
        }
    }
}

impl std::error::Error for DynamicsError {}

/// Longitudinal 2×2 mass block over (α, x). The swing/travel coupling is
/// m_p·r·l·cos α on both off-diagonals, mirroring the transverse block.
pub fn longitudinal_mass(params: &RobotParams, alpha: f64) -> Matrix2<f64> {
    let coupling = params.m_p * params.r * params.l * alpha.cos();
    Matrix2::new(
        params.i_fy + params.i_py,
        coupling,
        coupling,
        params.total_mass() * params.r + params.i_sy / params.r,
    )
}

/// Transverse 2×2 mass block over (β, φ).
pub fn transverse_mass(params: &RobotParams, beta: f64) -> Matrix2<f64> {
    let coupling = params.m_p * params.r * params.l * beta.cos();
    Matrix2::new(
        params.i_px,
        coupling,
        coupling,
        params.total_mass() * params.r * params.r + params.i_sx + params.i_fx,
    )
}

/// Full 4×4 mass matrix M(q): block-diagonal over the longitudinal (α, x)
/// and transverse (β, φ) pairs; cross-blocks are identically zero.
pub fn mass_matrix(params: &RobotParams, q: &Vector4<f64>) -> nalgebra::Matrix4<f64> {
    let mp = longitudinal_mass(params, q[ALPHA]);
    let mr = transverse_mass(params, q[BETA]);
    let mut m = nalgebra::Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&mp);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(&mr);
    m
}

/// Bias vector N(q, q̇): gravity, pivot damping (ζ terms), centrifugal terms
/// and the friction torques F_fx·r, F_fy·r. Friction forces are supplied by
/// the caller — the plant uses its truth model, controllers use estimates.
pub fn bias_vector(
    params: &RobotParams,
    q: &Vector4<f64>,
    qdot: &Vector4<f64>,
    f_fx: f64,
    f_fy: f64,
) -> Vector4<f64> {
    let (mpgl, z, r) = (params.m_p * params.g * params.l, params.zeta, params.r);
    let mprl = params.m_p * params.r * params.l;
    let (alpha, beta) = (q[ALPHA], q[BETA]);
    let (ad, xd, bd, pd) = (qdot[ALPHA], qdot[X_POS], qdot[BETA], qdot[PHI]);
    Vector4::new(
        mpgl * alpha.sin() * beta.cos() + z * (ad + xd * alpha.cos() / r),
        -mprl * ad * ad * alpha.sin() + z * (ad * alpha.cos() + xd / r) + f_fx * r,
        mpgl * alpha.cos() * beta.sin() + z * (bd + pd * beta.cos()),
        -mprl * bd * bd * beta.sin() + z * (pd + bd * beta.cos()) + f_fy * r,
    )
}

/// Centripetal force on the roll axis for a shell of radius r rolling a turn
/// of radius R = r/tan φ at speed v:  F_fy = M·v²·tan(φ)/r.
pub fn centripetal_friction(params: &RobotParams, v: f64, phi: f64) -> f64 {
    params.total_mass() * v * v * phi.tan() / params.r
}

/// Solves M(q)·q̈ = E·τ − N(q, q̇) as two independent 2×2 systems.
/// τ = [τ₁, τ₂] maps to the generalized force [τ₁, τ₁, τ₂, τ₂].
pub fn forward_dynamics(
    params: &RobotParams,
    q: &Vector4<f64>,
    qdot: &Vector4<f64>,
    tau: &Vector2<f64>,
    f_fx: f64,
    f_fy: f64,
) -> Result<Vector4<f64>, DynamicsError> {
    let n = bias_vector(params, q, qdot, f_fx, f_fy);
    let long = solve_block(
        &longitudinal_mass(params, q[ALPHA]),
        &Vector2::new(tau[0] - n[0], tau[0] - n[1]),
    )?;
    let trans = solve_block(
        &transverse_mass(params, q[BETA]),
        &Vector2::new(tau[1] - n[2], tau[1] - n[3]),
    )?;
    Ok(Vector4::new(long[0], long[1], trans[0], trans[1]))
}

/// 2×2 solve with an explicit determinant guard.
fn solve_block(m: &Matrix2<f64>, rhs: &Vector2<f64>) -> Result<Vector2<f64>, DynamicsError> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if det.abs() < 1e-12 {
        return Err(DynamicsError::SingularMass { det });
    }
    Ok(Vector2::new(
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
    ))
}

/// One RK4 step of the nonlinear plant. τ is clamped to ±tau_max at this
/// boundary (controllers see the same bound as a QP constraint). Friction
/// forces are re-evaluated from the stage state at every RK4 stage.
pub fn plant_step(
    params: &RobotParams,
    friction: &FrictionConfig,
    state: &GeneralizedState,
    tau: &Vector2<f64>,
    dt: f64,
) -> Result<GeneralizedState, DynamicsError> {
    let tau = Vector2::new(
        tau[0].clamp(-params.tau_max, params.tau_max),
        tau[1].clamp(-params.tau_max, params.tau_max),
    );
    let deriv = |s: &GeneralizedState| -> Result<(Vector4<f64>, Vector4<f64>), DynamicsError> {
        let f_fx = friction.longitudinal_force(params, s.v());
        let f_fy = friction.transverse_force(params, s.v(), s.phi());
        Ok((s.qdot, forward_dynamics(params, &s.q, &s.qdot, &tau, f_fx, f_fy)?))
    };

    let k1 = deriv(state)?;
    let s2 = GeneralizedState::new(state.q + 0.5 * dt * k1.0, state.qdot + 0.5 * dt * k1.1);
    let k2 = deriv(&s2)?;
    let s3 = GeneralizedState::new(state.q + 0.5 * dt * k2.0, state.qdot + 0.5 * dt * k2.1);
    let k3 = deriv(&s3)?;
    let s4 = GeneralizedState::new(state.q + dt * k3.0, state.qdot + dt * k3.1);
    let k4 = deriv(&s4)?;

    Ok(GeneralizedState::new(
        state.q + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        state.qdot + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    ))
}

/// Total mechanical energy ½·q̇ᵀM(q)q̇ − m_p·g·l·cos α·cos β. A first
/// integral of the unforced, undamped, friction-free dynamics — the
/// conservation self-test checks its drift under RK4.
pub fn mechanical_energy(params: &RobotParams, state: &GeneralizedState) -> f64 {
    let m = mass_matrix(params, &state.q);
    let kinetic = 0.5 * state.qdot.dot(&(m * state.qdot));
    let potential = -params.m_p * params.g * params.l * state.alpha().cos() * state.beta().cos();
    kinetic + potential
}
