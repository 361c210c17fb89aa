//! Linearized prediction models for the two decoupled control loops.
//!
//! Each sub-model has four states — longitudinal [α, α̇, x, ẋ] (ẋ is the
//! controlled velocity) and transverse [β, β̇, φ, φ̇] — and one torque input.
//! Linearizing the sub-model accelerations f = M⁻¹(E·u − N) about an
//! operating point gives the continuous affine model
//!
//!   ẋ = A·x + B·u + C
//!
//! whose angle rows are exact selectors ([0 1 0 0] and [0 0 0 1]) and whose
//! acceleration rows are closed-form partial derivatives of the 2×2 solve.
//! C is the tangent offset f(op, 0) − A·op, which collapses to f evaluated at
//! the origin for the origin-linearized case. Discretization is forward
//! Euler: A_d = I + A·T_s, B_d = B·T_s, C_d = C·T_s — deliberately not a
//! matrix exponential, so the identity is exact and cheap to refresh every
//! control cycle.

use crate::dynamics::{
    longitudinal_mass, transverse_mass, DynamicsError, GeneralizedState, RobotParams, ALPHA, BETA,
    PHI, X_POS,
};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};

/// Which decoupled half of the robot a model describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// (α, x): pendulum long-axis swing and travel. Input τ₁.
    Longitudinal,
    /// (β, φ): pendulum short-axis swing and shell roll. Input τ₂.
    Transverse,
}

/// Continuous + discrete affine model of one sub-system.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub axis: Axis,
    /// Continuous-time matrices: ẋ = A·x + B·u + C.
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
    pub c: Vector4<f64>,
    /// Forward-Euler discretization at period `t_s`.
    pub a_d: Matrix4<f64>,
    pub b_d: Vector4<f64>,
    pub c_d: Vector4<f64>,
    pub t_s: f64,
}

impl LinearModel {
    /// Linearize `axis` at `op` with the given constant friction-force
    /// estimate, then discretize at `t_s`.
    pub fn new(
        params: &RobotParams,
        axis: Axis,
        op: &GeneralizedState,
        friction_estimate: f64,
        t_s: f64,
    ) -> Result<Self, DynamicsError> {
        let (a, b, c) = linearize(params, axis, op, friction_estimate)?;
        let (a_d, b_d, c_d) = discretize(&a, &b, &c, t_s);
        Ok(LinearModel {
            axis,
            a,
            b,
            c,
            a_d,
            b_d,
            c_d,
            t_s,
        })
    }
}

/// Sub-model state [angle, angle rate, position, position rate] extracted
/// from the full generalized state.
pub fn sub_state(axis: Axis, state: &GeneralizedState) -> Vector4<f64> {
    match axis {
        Axis::Longitudinal => Vector4::new(
            state.q[ALPHA],
            state.qdot[ALPHA],
            state.q[X_POS],
            state.qdot[X_POS],
        ),
        Axis::Transverse => Vector4::new(
            state.q[BETA],
            state.qdot[BETA],
            state.q[PHI],
            state.qdot[PHI],
        ),
    }
}

/// Accelerations (pendulum, shell) of one sub-model at sub-state `s` under
/// torque `u` and constant friction force, with the other axis' pendulum
/// angle frozen at `other_angle` (it only enters through a cosine factor on
/// gravity).
pub fn sub_accel(
    params: &RobotParams,
    axis: Axis,
    s: &Vector4<f64>,
    u: f64,
    friction: f64,
    other_angle: f64,
) -> Result<Vector2<f64>, DynamicsError> {
    let (m, n) = sub_blocks(params, axis, s, friction, other_angle);
    solve2(&m, &Vector2::new(u - n[0], u - n[1]))
}

/// Mass block and bias pair of one sub-model.
fn sub_blocks(
    params: &RobotParams,
    axis: Axis,
    s: &Vector4<f64>,
    friction: f64,
    other_angle: f64,
) -> (Matrix2<f64>, Vector2<f64>) {
    let mpgl = params.m_p * params.g * params.l;
    let mprl = params.m_p * params.r * params.l;
    let z = params.zeta;
    let (angle, rate, pos_rate) = (s[0], s[1], s[3]);
    match axis {
        Axis::Longitudinal => {
            let m = longitudinal_mass(params, angle);
            let n = Vector2::new(
                mpgl * angle.sin() * other_angle.cos() + z * (rate + pos_rate * angle.cos() / params.r),
                -mprl * rate * rate * angle.sin()
                    + z * (rate * angle.cos() + pos_rate / params.r)
                    + friction * params.r,
            );
            (m, n)
        }
        Axis::Transverse => {
            let m = transverse_mass(params, angle);
            let n = Vector2::new(
                mpgl * other_angle.cos() * angle.sin() + z * (rate + pos_rate * angle.cos()),
                -mprl * rate * rate * angle.sin()
                    + z * (pos_rate + rate * angle.cos())
                    + friction * params.r,
            );
            (m, n)
        }
    }
}

/// Continuous affine model (A, B, C) of one sub-system about `op`.
///
/// Rows 1 and 3 of A are the exact selector rows; rows 2 and 4 are analytic
/// partials of the accelerations. The friction estimate is held constant
/// through the differentiation (the controllers refresh it per cycle).
pub fn linearize(
    params: &RobotParams,
    axis: Axis,
    op: &GeneralizedState,
    friction_estimate: f64,
) -> Result<(Matrix4<f64>, Vector4<f64>, Vector4<f64>), DynamicsError> {
    let other_angle = match axis {
        Axis::Longitudinal => op.q[BETA],
        Axis::Transverse => op.q[ALPHA],
    };
    let s = sub_state(axis, op);
    let (m, n) = sub_blocks(params, axis, &s, friction_estimate, other_angle);
    let f0 = solve2(&m, &Vector2::new(-n[0], -n[1]))?;

    let mpgl = params.m_p * params.g * params.l;
    let mprl = params.m_p * params.r * params.l;
    let z = params.zeta;
    let (angle, rate, pos_rate) = (s[0], s[1], s[3]);

    // Bias partials per sub-state [angle, rate, position, position rate];
    // position never appears in the dynamics (translation invariance).
    let (dn_dangle, dn_drate, dn_dposrate) = match axis {
        Axis::Longitudinal => (
            Vector2::new(
                mpgl * angle.cos() * other_angle.cos() - z * pos_rate * angle.sin() / params.r,
                -mprl * rate * rate * angle.cos() - z * rate * angle.sin(),
            ),
            Vector2::new(z, -2.0 * mprl * rate * angle.sin() + z * angle.cos()),
            Vector2::new(z * angle.cos() / params.r, z / params.r),
        ),
        Axis::Transverse => (
            Vector2::new(
                mpgl * other_angle.cos() * angle.cos() - z * pos_rate * angle.sin(),
                -mprl * rate * rate * angle.cos() - z * rate * angle.sin(),
            ),
            Vector2::new(z, -2.0 * mprl * rate * angle.sin() + z * angle.cos()),
            Vector2::new(z * angle.cos(), z),
        ),
    };

    // ∂f/∂s = M⁻¹(∂rhs/∂s − (∂M/∂s)·f); only the angle state moves M.
    let dm_dangle = {
        let dc = -mprl * angle.sin();
        Matrix2::new(0.0, dc, dc, 0.0)
    };
    let df_dangle = solve2(&m, &(-dn_dangle - dm_dangle * f0))?;
    let df_drate = solve2(&m, &(-dn_drate))?;
    let df_dposrate = solve2(&m, &(-dn_dposrate))?;
    let bf = solve2(&m, &Vector2::new(1.0, 1.0))?;

    let mut a = Matrix4::zeros();
    a[(0, 1)] = 1.0;
    a[(2, 3)] = 1.0;
    a.set_row(1, &nalgebra::RowVector4::new(df_dangle[0], df_drate[0], 0.0, df_dposrate[0]));
    a.set_row(3, &nalgebra::RowVector4::new(df_dangle[1], df_drate[1], 0.0, df_dposrate[1]));

    let b = Vector4::new(0.0, bf[0], 0.0, bf[1]);

    // Tangent offset: rows 1 and 3 cancel exactly (selector rows), the
    // acceleration rows keep f(op, 0) minus the linear part at op.
    let c = Vector4::new(
        0.0,
        f0[0] - a.row(1).transpose().dot(&s),
        0.0,
        f0[1] - a.row(3).transpose().dot(&s),
    );
    Ok((a, b, c))
}

/// Forward-Euler discretization: A_d = I + A·T_s, B_d = B·T_s, C_d = C·T_s.
pub fn discretize(
    a: &Matrix4<f64>,
    b: &Vector4<f64>,
    c: &Vector4<f64>,
    t_s: f64,
) -> (Matrix4<f64>, Vector4<f64>, Vector4<f64>) {
    (Matrix4::identity() + a * t_s, b * t_s, c * t_s)
}

/// Central-difference Jacobian of `f` at `point`: column i is
/// (f(p + h·eᵢ) − f(p − h·eᵢ)) / 2h.
pub fn numeric_jacobian<F>(f: F, point: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = point.len();
    let rows = f(point).len();
    let mut jac = DMatrix::zeros(rows, n);
    for i in 0..n {
        let mut plus = point.clone();
        let mut minus = point.clone();
        plus[i] += h;
        minus[i] -= h;
        let col = (f(&plus) - f(&minus)) / (2.0 * h);
        jac.set_column(i, &col);
    }
    jac
}

fn solve2(m: &Matrix2<f64>, rhs: &Vector2<f64>) -> Result<Vector2<f64>, DynamicsError> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if det.abs() < 1e-12 {
        return Err(DynamicsError::SingularMass { det });
    }
    Ok(Vector2::new(
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn p() -> RobotParams {
        RobotParams::default()
    }

    /// Full-state derivative of one sub-model as a closure over the sub-state,
    /// for finite-difference cross-checks.
    fn sub_deriv(
        params: &RobotParams,
        axis: Axis,
        friction: f64,
        other_angle: f64,
        u: f64,
    ) -> impl Fn(&DVector<f64>) -> DVector<f64> + '_ {
        move |s: &DVector<f64>| {
            let sv = Vector4::new(s[0], s[1], s[2], s[3]);
            let acc = sub_accel(params, axis, &sv, u, friction, other_angle).unwrap();
            DVector::from_vec(vec![s[1], acc[0], s[3], acc[1]])
        }
    }

    fn random_small_state(rng: &mut StdRng) -> GeneralizedState {
        GeneralizedState::new(
            Vector4::new(
                rng.gen_range(-0.15..0.15),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.25..0.25),
                rng.gen_range(-0.3..0.3),
            ),
            Vector4::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ),
        )
    }

    #[test]
    fn selector_rows_are_exact() {
        for axis in [Axis::Longitudinal, Axis::Transverse] {
            let (a, _, _) = linearize(&p(), axis, &GeneralizedState::default(), 0.0).unwrap();
            assert_eq!(a.row(0).transpose(), Vector4::new(0.0, 1.0, 0.0, 0.0));
            assert_eq!(a.row(2).transpose(), Vector4::new(0.0, 0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn offset_vanishes_at_origin_without_friction() {
        for axis in [Axis::Longitudinal, Axis::Transverse] {
            let (_, _, c) = linearize(&p(), axis, &GeneralizedState::default(), 0.0).unwrap();
            assert_eq!(c, Vector4::zeros());
        }
    }

    #[test]
    fn position_column_is_zero() {
        // Neither x nor φ feeds back into the dynamics.
        let mut rng = StdRng::seed_from_u64(7);
        for axis in [Axis::Longitudinal, Axis::Transverse] {
            let (a, _, _) = linearize(&p(), axis, &random_small_state(&mut rng), 0.4).unwrap();
            let col: Vector4<f64> = a.column(2).into_owned();
            assert_eq!(col, Vector4::zeros());
        }
    }

    #[test]
    fn gravity_stiffness_matches_finite_difference_at_origin() {
        let params = {
            let mut params = p();
            params.zeta = 0.0;
            params
        };
        let (a, _, _) = linearize(
            &params,
            Axis::Transverse,
            &GeneralizedState::default(),
            0.0,
        )
        .unwrap();
        let f = sub_deriv(&params, Axis::Transverse, 0.0, 0.0, 0.0);
        let jac = numeric_jacobian(f, &DVector::zeros(4), 1e-6);
        assert_relative_eq!(a[(1, 0)], jac[(1, 0)], max_relative = 1e-6);
        // φ couples to nothing: both columns vanish.
        assert_eq!(a[(1, 2)], 0.0);
        assert!(jac[(1, 2)].abs() < 1e-9);
    }

    #[test]
    fn analytic_jacobian_matches_numeric_at_random_points() {
        let params = p();
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..20 {
            let op = random_small_state(&mut rng);
            let friction = rng.gen_range(-5.0..5.0);
            for axis in [Axis::Longitudinal, Axis::Transverse] {
                let (a, b, _) = linearize(&params, axis, &op, friction).unwrap();
                let other = match axis {
                    Axis::Longitudinal => op.q[BETA],
                    Axis::Transverse => op.q[ALPHA],
                };
                let point = DVector::from_column_slice(sub_state(axis, &op).as_slice());
                let jac = numeric_jacobian(sub_deriv(&params, axis, friction, other, 0.0), &point, 1e-6);
                for i in 0..4 {
                    for j in 0..4 {
                        let (av, nv) = (a[(i, j)], jac[(i, j)]);
                        assert!(
                            (av - nv).abs() <= 1e-5 * av.abs().max(nv.abs()).max(1.0),
                            "axis {axis:?} entry ({i},{j}): analytic {av} vs numeric {nv}"
                        );
                    }
                }
                // Input column via finite difference on u.
                let h = 1e-6;
                let s = sub_state(axis, &op);
                let up = sub_accel(&params, axis, &s, h, friction, other).unwrap();
                let dn = sub_accel(&params, axis, &s, -h, friction, other).unwrap();
                let fd_b = (up - dn) / (2.0 * h);
                assert_relative_eq!(b[1], fd_b[0], max_relative = 1e-6);
                assert_relative_eq!(b[3], fd_b[1], max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn tangent_model_reproduces_accelerations_at_operating_point() {
        // ẋ = A·op + B·u + C must equal the nonlinear derivative at op.
        let params = p();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..5 {
            let op = random_small_state(&mut rng);
            let u = rng.gen_range(-2.0..2.0);
            for axis in [Axis::Longitudinal, Axis::Transverse] {
                let other = match axis {
                    Axis::Longitudinal => op.q[BETA],
                    Axis::Transverse => op.q[ALPHA],
                };
                let (a, b, c) = linearize(&params, axis, &op, 1.0, ).unwrap();
                let s = sub_state(axis, &op);
                let pred = a * s + b * u + c;
                let acc = sub_accel(&params, axis, &s, u, 1.0, other).unwrap();
                assert_relative_eq!(pred[0], s[1], epsilon = 1e-12);
                assert_relative_eq!(pred[1], acc[0], epsilon = 1e-9, max_relative = 1e-9);
                assert_relative_eq!(pred[2], s[3], epsilon = 1e-12);
                assert_relative_eq!(pred[3], acc[1], epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn discretize_identities_are_bit_exact() {
        let (a, b, c) = linearize(&p(), Axis::Transverse, &GeneralizedState::default(), 0.5).unwrap();
        let t_s = 0.02;
        let (a_d, b_d, c_d) = discretize(&a, &b, &c, t_s);
        assert_eq!(a_d, Matrix4::identity() + a * t_s);
        assert_eq!(b_d, b * t_s);
        assert_eq!(c_d, c * t_s);
        // Zero dynamics discretize to the identity.
        let (i4, zb, _) = discretize(&Matrix4::zeros(), &Vector4::zeros(), &Vector4::zeros(), 0.5);
        assert_eq!(i4, Matrix4::identity());
        assert_eq!(zb, Vector4::zeros());
        // Structured input column scales componentwise.
        let b = Vector4::new(0.0, 3.0, 0.0, -1.5);
        let (_, b_d, _) = discretize(&Matrix4::zeros(), &b, &Vector4::zeros(), 0.02);
        assert_eq!(b_d, Vector4::new(0.0, 0.06, 0.0, -0.03));
    }

    #[test]
    fn one_discrete_step_approximates_fine_continuous_integration() {
        // Forward Euler is first order: halving T_s should shrink the error
        // against a finely integrated continuous model by about 2×... per
        // step the local error is O(T_s²), so the ratio is ~4.
        let params = p();
        let op = GeneralizedState::default();
        let (a, b, c) = linearize(&params, Axis::Transverse, &op, 0.0).unwrap();
        let x0 = Vector4::new(0.05, 0.0, 0.1, -0.02);
        let u = 0.8;
        let err_at = |t_s: f64| {
            let (a_d, b_d, c_d) = discretize(&a, &b, &c, t_s);
            let discrete = a_d * x0 + b_d * u + c_d;
            // RK4 on the linear ODE with 100 substeps ≈ exact.
            let mut x = x0;
            let h = t_s / 100.0;
            for _ in 0..100 {
                let f = |x: &Vector4<f64>| a * x + b * u + c;
                let k1 = f(&x);
                let k2 = f(&(x + 0.5 * h * k1));
                let k3 = f(&(x + 0.5 * h * k2));
                let k4 = f(&(x + h * k3));
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            (discrete - x).abs().max()
        };
        let coarse = err_at(0.02);
        let fine = err_at(0.01);
        assert!(coarse < 2e-3, "Euler step error too large: {coarse}");
        let ratio = coarse / fine;
        assert!((2.5..6.0).contains(&ratio), "expected ~4× error scaling, got {ratio}");
    }

    #[test]
    fn numeric_jacobian_on_known_functions() {
        // Linear map: exact for any h.
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let f = |x: &DVector<f64>| &m * x;
        let jac = numeric_jacobian(f, &DVector::from_vec(vec![0.3, -1.0, 2.0]), 0.1);
        assert_relative_eq!(jac, m, epsilon = 1e-12);
        // d/dx sin x at 0 with h = 1e-5.
        let jac = numeric_jacobian(
            |x: &DVector<f64>| DVector::from_vec(vec![x[0].sin()]),
            &DVector::zeros(1),
            1e-5,
        );
        assert!((jac[(0, 0)] - 1.0).abs() < 1e-9);
    }
}
