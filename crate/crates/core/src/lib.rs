//! Motion-control stack for a pendulum-driven spherical robot.
//!
//! The robot rolls by swinging an internal 2-DOF pendulum: the longitudinal
//! swing α drives forward travel, the transverse swing β leans the shell to a
//! roll angle φ, which sets the turning radius R = r/tan φ. This crate
//! contains everything needed to simulate and control it:
//!
//! - [`dynamics`] — nonlinear whole-body plant model, friction truth models,
//!   RK4 integrator, energy bookkeeping.
//! - [`linmodel`] — analytic linearization of the block-decoupled sub-models
//!   and their forward-Euler discretization (the MPC prediction models).
//! - [`qp`] — prediction stacking, cost condensation, and a dense primal
//!   active-set QP solver with warm starting and KKT verification.
//! - [`eso`] — extended-state observer: constant-disturbance augmentation,
//!   pole-placement gain synthesis, predictor-corrector updates.
//! - [`mlp`] — small feedforward network (tanh hidden layer) trained with
//!   Levenberg-Marquardt; generates the pendulum lean reference β_d(v, φ_d).
//! - [`controllers`] — the two production loops (offset-free MPC for velocity,
//!   phase-weighted MPC for orientation) plus a PID baseline.
//! - [`harness`] — scenario runner, performance metrics, trajectory guidance,
//!   and CSV/JSON export.

pub mod controllers;
pub mod dynamics;
pub mod eso;
pub mod harness;
pub mod linmodel;
pub mod mlp;
pub mod qp;
