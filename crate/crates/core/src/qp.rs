//! Dense MPC condensation and an in-house primal active-set QP solver.
//!
//! The receding-horizon cost over a prediction horizon N_p with control
//! horizon N_c is condensed onto the input sequence U = [u₀ … u_{N_c−1}]ᵀ:
//! stacking the discrete model gives X = A_qp·x₀ + B_qp·U + C_qp, and the
//! quadratic tracking cost becomes
//!
//!   min_U ½·UᵀHU + fᵀU   subject to   d_lo ≤ D·U ≤ d_hi
//!
//! with H = 2(B_qpᵀ·Q_qp·B_qp + R_qp) and
//! f = 2[B_qpᵀ·Q_qp·(A_qp·x₀ + C_qp − X_ref) − R_qp·U_ref], where Q_qp
//! repeats the stage weight Q with the terminal weight P in the last block
//! and R_qp = R·I. Inputs beyond N_c are held at u_{N_c−1} (move blocking).
//!
//! The solver is a primal active-set method: a Cholesky factor of H drives
//! range-space equality-constrained subproblem solves, constraints are added
//! at blocking steps and removed on wrong-signed multipliers, and ties break
//! toward the lowest row index so solves are deterministic. Multipliers are
//! signed: λᵢ > 0 means row i sits at its upper bound, λᵢ < 0 at its lower
//! bound, and stationarity is H·U + f + Dᵀλ = 0.

use crate::linmodel::LinearModel;
use nalgebra::{Cholesky, DMatrix, DVector, Matrix4, Vector4};
use std::error::Error;
use std::fmt;

/// State dimension of the per-axis models this module condenses.
const N_STATE: usize = 4;

/// Feasibility tolerance on constraint-row values.
const FEAS_TOL: f64 = 1e-10;

/// Horizons, weights, and input bounds for one MPC loop.
#[derive(Debug, Clone, PartialEq)]
pub struct MPCConfig {
    /// Prediction horizon (steps), ≥ 1.
    pub n_p: usize,
    /// Control horizon (steps), 1 ≤ n_c ≤ n_p.
    pub n_c: usize,
    /// Stage state weight (symmetric PSD).
    pub q: Matrix4<f64>,
    /// Terminal state weight (symmetric PSD), applied to the last block.
    pub p: Matrix4<f64>,
    /// Input weight; must be > 0 so the condensed Hessian stays positive
    /// definite.
    pub r: f64,
    /// Input box bounds (N·m).
    pub u_min: f64,
    pub u_max: f64,
    /// Optional per-step input rate bound (N·m per step).
    pub du_max: Option<f64>,
}

impl MPCConfig {
    /// Check the structural invariants: horizon ordering, strict input
    /// weight, symmetric PSD state weights, ordered bounds.
    pub fn validate(&self) -> Result<(), QPError> {
        if self.n_c < 1 || self.n_c > self.n_p {
            return Err(QPError::InvalidConfig {
                reason: "control horizon must satisfy 1 <= n_c <= n_p",
            });
        }
        if !(self.r > 0.0) {
            return Err(QPError::InvalidConfig {
                reason: "input weight r must be strictly positive",
            });
        }
        if self.u_min > self.u_max {
            return Err(QPError::InvalidConfig {
                reason: "input bounds must satisfy u_min <= u_max",
            });
        }
        if let Some(du) = self.du_max {
            if !(du >= 0.0) {
                return Err(QPError::InvalidConfig {
                    reason: "input rate bound must be non-negative",
                });
            }
        }
        for (m, name) in [(&self.q, "q"), (&self.p, "p")] {
            if (m - m.transpose()).abs().max() > 1e-12 {
                return Err(QPError::InvalidConfig {
                    reason: match name {
                        "q" => "stage weight q must be symmetric",
                        _ => "terminal weight p must be symmetric",
                    },
                });
            }
            let eig = m.symmetric_eigen().eigenvalues;
            if eig.min() < -1e-9 {
                return Err(QPError::InvalidConfig {
                    reason: match name {
                        "q" => "stage weight q must be positive semidefinite",
                        _ => "terminal weight p must be positive semidefinite",
                    },
                });
            }
        }
        Ok(())
    }
}

/// Stacked prediction system X = A_qp·x₀ + B_qp·U + C_qp, where X collects
/// the predicted states x₁ … x_{N_p}.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    /// (4·N_p) × 4; block row k−1 is A_d^k.
    pub a_qp: DMatrix<f64>,
    /// (4·N_p) × N_c, block lower triangular with input hold beyond N_c.
    pub b_qp: DMatrix<f64>,
    /// 4·N_p accumulated affine offsets.
    pub c_qp: DVector<f64>,
}

/// Condensed dense QP: min ½UᵀHU + fᵀU subject to d_lo ≤ D·U ≤ d_hi.
#[derive(Debug, Clone, PartialEq)]
pub struct QPProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    /// m × N_c constraint rows: first the N_c input box rows (identity),
    /// then, when a rate bound is configured, N_c − 1 first-difference rows.
    pub d: DMatrix<f64>,
    pub d_lo: DVector<f64>,
    pub d_hi: DVector<f64>,
}

impl QPProblem {
    /// Tighten the first input's box row so that |u₀ − u_prev| ≤ du_max.
    /// Row 0 is u₀'s box row by construction of [`condense`].
    pub fn limit_first_step(&mut self, u_prev: f64, du_max: f64) {
        if self.d.nrows() > 0 {
            self.d_lo[0] = self.d_lo[0].max(u_prev - du_max);
            self.d_hi[0] = self.d_hi[0].min(u_prev + du_max);
        }
    }
}

/// Solution of a QP: optimal input sequence, signed multipliers per
/// constraint row, and the number of active-set iterations spent.
#[derive(Debug, Clone, PartialEq)]
pub struct QPSolution {
    pub u: DVector<f64>,
    pub lambda: DVector<f64>,
    pub iterations: usize,
}

/// Errors from condensation and the QP solver.
#[derive(Debug, Clone, PartialEq)]
pub enum QPError {
    /// A vector argument has the wrong length.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// An [`MPCConfig`] invariant is violated.
    InvalidConfig { reason: &'static str },
    /// The constraint set admits no feasible point.
    Infeasible,
    /// The active-set iteration guard tripped.
    MaxIterations { limit: usize },
    /// H admits no Cholesky factorization.
    NotPositiveDefinite,
    /// The working-set subproblem became numerically degenerate.
    NumericalFailure,
}

impl fmt::Display for QPError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QPError::DimensionMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected length {expected}, got {got}"),
            QPError::InvalidConfig { reason } => write!(f, "invalid MPC configuration: {reason}"),
            QPError::Infeasible => write!(f, "constraints are inconsistent"),
            QPError::MaxIterations { limit } => {
                write!(f, "active-set solver exceeded {limit} iterations")
            }
            QPError::NotPositiveDefinite => write!(f, "Hessian is not positive definite"),
            QPError::NumericalFailure => write!(f, "working-set subproblem is degenerate"),
        }
    }
}

impl Error for QPError {}

/// Stack the discrete model over the horizons in `cfg`.
///
/// Expanding the recurrence x_{k+1} = A_d·x_k + B_d·u_k + C_d gives block
/// row k (predicting x_{k+1}, k = 0 … N_p−1):
///   A_qp block = A_d^{k+1},
///   B_qp block column j = A_d^{k−j}·B_d for j ≤ min(k, N_c−1), where the
///   last column also absorbs the held inputs u_j = u_{N_c−1} for j ≥ N_c,
///   C_qp block = Σ_{i=0}^{k} A_d^i·C_d.
pub fn build_prediction(model: &LinearModel, cfg: &MPCConfig) -> PredictionMatrices {
    let (n_p, n_c) = (cfg.n_p, cfg.n_c);
    let mut a_pow: Vec<Matrix4<f64>> = Vec::with_capacity(n_p + 1);
    a_pow.push(Matrix4::identity());
    for k in 0..n_p {
        let next = model.a_d * a_pow[k];
        a_pow.push(next);
    }

    let mut a_qp = DMatrix::zeros(N_STATE * n_p, N_STATE);
    let mut b_qp = DMatrix::zeros(N_STATE * n_p, n_c);
    let mut c_qp = DVector::zeros(N_STATE * n_p);

    let mut c_acc = Vector4::zeros();
    for k in 0..n_p {
        a_qp
            .view_mut((N_STATE * k, 0), (N_STATE, N_STATE))
            .copy_from(&a_pow[k + 1]);
        c_acc = model.a_d * c_acc + model.c_d;
        c_qp
            .rows_mut(N_STATE * k, N_STATE)
            .copy_from(&c_acc);
        for j in 0..=k.min(n_c - 1) {
            let mut col = a_pow[k - j] * model.b_d;
            if j == n_c - 1 {
                // Move blocking: inputs beyond the control horizon are held
                // at u_{N_c−1}, so their contributions fold into this column.
                for i in n_c..=k {
                    col += a_pow[k - i] * model.b_d;
                }
            }
            b_qp
                .view_mut((N_STATE * k, j), (N_STATE, 1))
                .copy_from(&col);
        }
    }
    PredictionMatrices { a_qp, b_qp, c_qp }
}

/// Multiply the stacked weight Q_qp = blockdiag(Q, …, Q, P) into a stacked
/// matrix without forming it.
fn apply_stacked_weight(cfg: &MPCConfig, stacked: &DMatrix<f64>) -> DMatrix<f64> {
    let n_p = stacked.nrows() / N_STATE;
    let mut out = DMatrix::zeros(stacked.nrows(), stacked.ncols());
    for k in 0..n_p {
        let w = if k + 1 == n_p { &cfg.p } else { &cfg.q };
        let block = stacked.view((N_STATE * k, 0), (N_STATE, stacked.ncols()));
        out.view_mut((N_STATE * k, 0), (N_STATE, stacked.ncols()))
            .copy_from(&(w * block));
    }
    out
}

/// Condense the tracking cost about (`x_ref`, `u_ref`) into a dense QP.
///
/// `x_ref` stacks the N_p state references; `u_ref` holds the N_c input
/// references. Constraint rows are the N_c input box rows followed by the
/// N_c − 1 first-difference rows when a rate bound is configured.
pub fn condense(
    pred: &PredictionMatrices,
    cfg: &MPCConfig,
    x0: &Vector4<f64>,
    x_ref: &DVector<f64>,
    u_ref: &DVector<f64>,
) -> Result<QPProblem, QPError> {
    let n_c = pred.b_qp.ncols();
    let rows = pred.b_qp.nrows();
    if x_ref.len() != rows {
        return Err(QPError::DimensionMismatch {
            what: "stacked state reference",
            expected: rows,
            got: x_ref.len(),
        });
    }
    if u_ref.len() != n_c {
        return Err(QPError::DimensionMismatch {
            what: "input reference",
            expected: n_c,
            got: u_ref.len(),
        });
    }

    let weighted_b = apply_stacked_weight(cfg, &pred.b_qp);
    let mut h = 2.0 * (pred.b_qp.transpose() * &weighted_b);
    for i in 0..n_c {
        h[(i, i)] += 2.0 * cfg.r;
    }
    // Symmetrize away accumulation round-off.
    h = (&h + h.transpose()) * 0.5;

    let residual = &pred.a_qp * x0 + &pred.c_qp - x_ref;
    let mut f = 2.0 * (weighted_b.transpose() * residual);
    f -= 2.0 * cfg.r * u_ref;

    let m = n_c + if cfg.du_max.is_some() { n_c - 1 } else { 0 };
    let mut d = DMatrix::zeros(m, n_c);
    let mut d_lo = DVector::zeros(m);
    let mut d_hi = DVector::zeros(m);
    for k in 0..n_c {
        d[(k, k)] = 1.0;
        d_lo[k] = cfg.u_min;
        d_hi[k] = cfg.u_max;
    }
    if let Some(du) = cfg.du_max {
        for k in 1..n_c {
            let row = n_c + k - 1;
            d[(row, k)] = 1.0;
            d[(row, k - 1)] = -1.0;
            d_lo[row] = -du;
            d_hi[row] = du;
        }
    }
    Ok(QPProblem { h, f, d, d_lo, d_hi })
}

/// ½uᵀHu + fᵀu.
pub fn objective(qp: &QPProblem, u: &DVector<f64>) -> f64 {
    0.5 * (u.transpose() * &qp.h * u)[(0, 0)] + qp.f.dot(u)
}

/// The three KKT residual norms for a primal/dual pair:
/// stationarity ‖Hu + f + Dᵀλ‖∞, primal feasibility (largest bound
/// violation, 0 when feasible), and complementarity (largest |λᵢ|·slack on
/// the bound side each multiplier claims).
pub fn kkt_residual(qp: &QPProblem, u: &DVector<f64>, lambda: &DVector<f64>) -> (f64, f64, f64) {
    let grad = &qp.h * u + &qp.f + qp.d.transpose() * lambda;
    let stationarity = grad.abs().max();

    let mut feasibility = 0.0f64;
    let mut complementarity = 0.0f64;
    for i in 0..qp.d.nrows() {
        let val = row_value(&qp.d, i, u);
        feasibility = feasibility.max(qp.d_lo[i] - val).max(val - qp.d_hi[i]);
        let l = lambda[i];
        if l > 0.0 {
            complementarity = complementarity.max((l * (qp.d_hi[i] - val)).abs());
        } else if l < 0.0 {
            complementarity = complementarity.max((l * (val - qp.d_lo[i])).abs());
        }
    }
    (stationarity, feasibility.max(0.0), complementarity)
}

fn row_value(d: &DMatrix<f64>, i: usize, u: &DVector<f64>) -> f64 {
    d.row(i).iter().zip(u.iter()).map(|(a, b)| a * b).sum()
}

/// Shape of a constraint row, used by the feasibility repair.
enum RowKind {
    /// Single coefficient 1.0 at this column: a plain bound on one input.
    Bound(usize),
    /// +1 at `.0`, −1 at `.1`: a difference bound between two inputs.
    Difference(usize, usize),
    General,
}

fn classify_row(d: &DMatrix<f64>, i: usize) -> RowKind {
    let nz: Vec<(usize, f64)> = d
        .row(i)
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| (j, *v))
        .collect();
    match nz.as_slice() {
        [(j, v)] if *v == 1.0 => RowKind::Bound(*j),
        [(a, va), (b, vb)] if *va == -1.0 && *vb == 1.0 => RowKind::Difference(*b, *a),
        [(a, va), (b, vb)] if *va == 1.0 && *vb == -1.0 => RowKind::Difference(*a, *b),
        _ => RowKind::General,
    }
}

/// Produce a feasible start: clamp bound rows, repair difference rows in a
/// forward pass, then fall back to cyclic projections for any remaining
/// rows. Returns `Infeasible` when no point within tolerance is found.
fn initial_point(qp: &QPProblem, warm_start: Option<&DVector<f64>>) -> Result<DVector<f64>, QPError> {
    let n = qp.h.nrows();
    let mut u = match warm_start {
        Some(w) => w.clone(),
        None => DVector::zeros(n),
    };
    let m = qp.d.nrows();
    if m == 0 {
        return Ok(u);
    }

    // Tightest per-variable bounds over all plain bound rows.
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    let kinds: Vec<RowKind> = (0..m).map(|i| classify_row(&qp.d, i)).collect();
    for (i, kind) in kinds.iter().enumerate() {
        if let RowKind::Bound(j) = kind {
            lo[*j] = lo[*j].max(qp.d_lo[i]);
            hi[*j] = hi[*j].min(qp.d_hi[i]);
        }
    }
    for j in 0..n {
        if lo[j] > hi[j] + FEAS_TOL {
            return Err(QPError::Infeasible);
        }
        u[j] = u[j].clamp(lo[j].min(hi[j]), hi[j]);
    }

    // Forward repair of difference rows: move the later variable into the
    // allowed band around the earlier one, then back inside its own bounds
    // (the intersection is non-empty whenever the bands overlap zero).
    let mut diffs: Vec<(usize, usize, usize)> = kinds
        .iter()
        .enumerate()
        .filter_map(|(i, k)| match k {
            RowKind::Difference(a, b) => Some((*a, *b, i)),
            _ => None,
        })
        .collect();
    diffs.sort_by_key(|(a, _, _)| *a);
    for (a, b, i) in diffs {
        let delta = (u[a] - u[b]).clamp(qp.d_lo[i], qp.d_hi[i]);
        u[a] = (u[b] + delta).clamp(lo[a].min(hi[a]), hi[a]);
    }

    let feasible = |u: &DVector<f64>| {
        (0..m).all(|i| {
            let v = row_value(&qp.d, i, u);
            v >= qp.d_lo[i] - FEAS_TOL && v <= qp.d_hi[i] + FEAS_TOL
        })
    };
    if feasible(&u) {
        return Ok(u);
    }
    // Cyclic projection fallback for general rows.
    for _ in 0..200 {
        for i in 0..m {
            let row = qp.d.row(i);
            let norm2: f64 = row.iter().map(|v| v * v).sum();
            if norm2 == 0.0 {
                continue;
            }
            let val = row_value(&qp.d, i, &u);
            let shift = if val > qp.d_hi[i] {
                (qp.d_hi[i] - val) / norm2
            } else if val < qp.d_lo[i] {
                (qp.d_lo[i] - val) / norm2
            } else {
                continue;
            };
            for (j, v) in row.iter().enumerate() {
                u[j] += shift * v;
            }
        }
        if feasible(&u) {
            return Ok(u);
        }
    }
    Err(QPError::Infeasible)
}

/// Gram matrix of the working-set rows through H⁻¹, with its factorization.
/// Returns None when the rows have become numerically dependent.
struct EqpStep {
    /// Step direction with the working-set rows held fixed.
    p: DVector<f64>,
    /// Multipliers of the working-set rows, in working-set order.
    lambda_w: DVector<f64>,
}

fn eqp_step(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    d: &DMatrix<f64>,
    working: &[(usize, f64)],
    grad: &DVector<f64>,
) -> Option<EqpStep> {
    let n = grad.len();
    if working.is_empty() {
        return Some(EqpStep {
            p: -chol.solve(grad),
            lambda_w: DVector::zeros(0),
        });
    }
    let k = working.len();
    let mut dw_t = DMatrix::zeros(n, k);
    for (col, (row, _)) in working.iter().enumerate() {
        dw_t.set_column(col, &d.row(*row).transpose());
    }
    let y = chol.solve(&dw_t);
    let gram = dw_t.transpose() * &y;
    let rhs = -(y.transpose() * grad);
    let lambda_w = match Cholesky::new(gram.clone()) {
        Some(c) => c.solve(&rhs),
        None => gram.lu().solve(&rhs)?,
    };
    let p = -chol.solve(&(grad + &dw_t * &lambda_w));
    Some(EqpStep { p, lambda_w })
}

/// Solve the QP with a primal active-set method.
///
/// The warm start seeds both the initial point (after feasibility repair)
/// and the initial working set (rows found exactly at a bound). Returns the
/// optimizer, signed multipliers, and iteration count.
pub fn solve_qp(qp: &QPProblem, warm_start: Option<&DVector<f64>>) -> Result<QPSolution, QPError> {
    let n = qp.h.nrows();
    if qp.f.len() != n {
        return Err(QPError::DimensionMismatch {
            what: "linear term",
            expected: n,
            got: qp.f.len(),
        });
    }
    if let Some(w) = warm_start {
        if w.len() != n {
            return Err(QPError::DimensionMismatch {
                what: "warm start",
                expected: n,
                got: w.len(),
            });
        }
    }
    let m = qp.d.nrows();
    for i in 0..m {
        if qp.d_lo[i] > qp.d_hi[i] {
            return Err(QPError::Infeasible);
        }
    }
    let chol = Cholesky::new(qp.h.clone()).ok_or(QPError::NotPositiveDefinite)?;
    let mut u = initial_point(qp, warm_start)?;

    // Seed the working set with rows already at a bound, keeping the rows
    // independent (each addition must leave the Gram factorizable).
    let mut working: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        let val = row_value(&qp.d, i, &u);
        let sign = if qp.d_hi[i].is_finite() && (val - qp.d_hi[i]).abs() <= FEAS_TOL {
            1.0
        } else if qp.d_lo[i].is_finite() && (val - qp.d_lo[i]).abs() <= FEAS_TOL {
            -1.0
        } else {
            continue;
        };
        working.push((i, sign));
        let probe = eqp_step(&chol, &qp.d, &working, &qp.f);
        if probe.is_none() {
            working.pop();
        }
    }

    let limit = (m + n) * 10;
    let mut iterations = 0;
    while iterations < limit {
        iterations += 1;
        let grad = &qp.h * &u + &qp.f;
        let step = eqp_step(&chol, &qp.d, &working, &grad).ok_or(QPError::NumericalFailure)?;
        let p_scale = 1e-11 * (1.0 + u.abs().max());

        if step.p.abs().max() <= p_scale {
            // Converged on this working set: check multiplier signs.
            let mut worst: Option<(usize, f64, usize)> = None; // (slot, violation, row)
            for (slot, (row, sign)) in working.iter().enumerate() {
                let violation = -sign * step.lambda_w[slot];
                let tol = 1e-9 * (1.0 + step.lambda_w.abs().max());
                if violation > tol {
                    let better = match worst {
                        None => true,
                        Some((_, v, r)) => violation > v + 1e-15 || ((violation - v).abs() <= 1e-15 && *row < r),
                    };
                    if better {
                        worst = Some((slot, violation, *row));
                    }
                }
            }
            match worst {
                Some((slot, _, _)) => {
                    working.remove(slot);
                }
                None => {
                    let mut lambda = DVector::zeros(m);
                    for (slot, (row, _)) in working.iter().enumerate() {
                        lambda[*row] = step.lambda_w[slot];
                    }
                    return Ok(QPSolution {
                        u,
                        lambda,
                        iterations,
                    });
                }
            }
            continue;
        }

        // Step toward the subproblem optimum, stopping at the first
        // blocking constraint outside the working set.
        let mut t = 1.0f64;
        let mut blocking: Option<(usize, f64)> = None;
        for i in 0..m {
            if working.iter().any(|(row, _)| *row == i) {
                continue;
            }
            let rate = row_value(&qp.d, i, &step.p);
            let val = row_value(&qp.d, i, &u);
            let dir_tol = 1e-13 * (1.0 + step.p.abs().max());
            let (limit_t, sign) = if rate > dir_tol && qp.d_hi[i].is_finite() {
                (((qp.d_hi[i] - val) / rate).max(0.0), 1.0)
            } else if rate < -dir_tol && qp.d_lo[i].is_finite() {
                (((qp.d_lo[i] - val) / rate).max(0.0), -1.0)
            } else {
                continue;
            };
            if limit_t < t {
                t = limit_t;
                blocking = Some((i, sign));
            }
        }
        u += t * &step.p;
        if let Some((row, sign)) = blocking {
            working.push((row, sign));
        }
    }
    Err(QPError::MaxIterations { limit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmodel::Axis;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn cfg(n_p: usize, n_c: usize) -> MPCConfig {
        MPCConfig {
            n_p,
            n_c,
            q: Matrix4::identity(),
            p: Matrix4::identity(),
            r: 0.1,
            u_min: -10.0,
            u_max: 10.0,
            du_max: None,
        }
    }

    fn random_model(rng: &mut StdRng) -> LinearModel {
        // Mildly contracting random discrete system in the 4-state container.
        let a_d = Matrix4::from_fn(|_, _| rng.gen_range(-0.4..0.4)) + Matrix4::identity() * 0.3;
        let b_d = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let c_d = Vector4::from_fn(|_, _| rng.gen_range(-0.1..0.1));
        LinearModel {
            axis: Axis::Longitudinal,
            a: Matrix4::zeros(),
            b: Vector4::zeros(),
            c: Vector4::zeros(),
            a_d,
            b_d,
            c_d,
            t_s: 0.02,
        }
    }

    fn simulate(model: &LinearModel, x0: &Vector4<f64>, u: &[f64], n_p: usize) -> Vec<Vector4<f64>> {
        let mut xs = Vec::new();
        let mut x = *x0;
        for k in 0..n_p {
            let uk = u[k.min(u.len() - 1)];
            x = model.a_d * x + model.b_d * uk + model.c_d;
            xs.push(x);
        }
        xs
    }

    fn random_box_qp(rng: &mut StdRng, n: usize) -> QPProblem {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * (n as f64);
        let f = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let mut d = DMatrix::zeros(n, n);
        let mut d_lo = DVector::zeros(n);
        let mut d_hi = DVector::zeros(n);
        for i in 0..n {
            d[(i, i)] = 1.0;
            let a = rng.gen_range(-1.0..0.5);
            let b = rng.gen_range(a..1.5);
            d_lo[i] = a;
            d_hi[i] = b;
        }
        QPProblem { h, f, d, d_lo, d_hi }
    }

    /// Global box-QP minimizer by enumerating every {free, lower, upper}
    /// assignment: a strictly convex QP's optimum is the feasible candidate
    /// of least objective.
    fn enumerate_box_min(qp: &QPProblem) -> DVector<f64> {
        let n = qp.h.nrows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut states = Vec::with_capacity(n);
            let mut c = code;
            for _ in 0..n {
                states.push(c % 3);
                c /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&i| states[i] == 0).collect();
            let mut u = DVector::zeros(n);
            for i in 0..n {
                u[i] = match states[i] {
                    1 => qp.d_lo[i],
                    2 => qp.d_hi[i],
                    _ => 0.0,
                };
            }
            if !free.is_empty() {
                let nf = free.len();
                let mut hff = DMatrix::zeros(nf, nf);
                let mut rhs = DVector::zeros(nf);
                for (a, &i) in free.iter().enumerate() {
                    rhs[a] = -qp.f[i];
                    for (b, &j) in free.iter().enumerate() {
                        hff[(a, b)] = qp.h[(i, j)];
                    }
                    for j in 0..n {
                        if states[j] != 0 {
                            rhs[a] -= qp.h[(i, j)] * u[j];
                        }
                    }
                }
                let sol = Cholesky::new(hff).unwrap().solve(&rhs);
                for (a, &i) in free.iter().enumerate() {
                    u[i] = sol[a];
                }
            }
            let ok = (0..n).all(|i| u[i] >= qp.d_lo[i] - 1e-9 && u[i] <= qp.d_hi[i] + 1e-9);
            if !ok {
                continue;
            }
            let obj = objective(qp, &u);
            if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                best = Some((obj, u));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn single_step_prediction_equals_discrete_model() {
        let mut rng = StdRng::seed_from_u64(1);
        let model = random_model(&mut rng);
        let pred = build_prediction(&model, &cfg(1, 1));
        let a: Matrix4<f64> = pred.a_qp.fixed_view::<4, 4>(0, 0).into_owned().into();
        assert_eq!(a, model.a_d);
        let b: Vector4<f64> = pred.b_qp.fixed_view::<4, 1>(0, 0).into_owned().into();
        assert_eq!(b, model.b_d);
        let c: Vector4<f64> = pred.c_qp.fixed_rows::<4>(0).into_owned();
        assert_eq!(c, model.c_d);
    }

    #[test]
    fn two_step_blocks_unroll_the_recurrence() {
        let mut rng = StdRng::seed_from_u64(2);
        let model = random_model(&mut rng);
        let pred = build_prediction(&model, &cfg(2, 2));
        let a2: Matrix4<f64> = pred.a_qp.fixed_view::<4, 4>(4, 0).into_owned().into();
        assert_relative_eq!(a2, model.a_d * model.a_d, epsilon = 1e-14);
        let c2: Vector4<f64> = pred.c_qp.fixed_rows::<4>(4).into_owned();
        assert_relative_eq!(
            c2,
            (model.a_d + Matrix4::identity()) * model.c_d,
            epsilon = 1e-14
        );
    }

    #[test]
    fn stacked_prediction_matches_step_simulation_with_input_hold() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..25 {
            let model = random_model(&mut rng);
            let n_p = rng.gen_range(1..=6);
            let n_c = rng.gen_range(1..=n_p);
            let pred = build_prediction(&model, &cfg(n_p, n_c));
            let x0 = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let u: Vec<f64> = (0..n_c).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let stacked = &pred.a_qp * x0 + &pred.b_qp * DVector::from_vec(u.clone()) + &pred.c_qp;
            let sim = simulate(&model, &x0, &u, n_p);
            for k in 0..n_p {
                for i in 0..4 {
                    let expect = sim[k][i];
                    let got = stacked[4 * k + i];
                    assert!(
                        (expect - got).abs() <= 1e-12 * expect.abs().max(1.0),
                        "block {k} state {i}: {expect} vs {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn identity_reduction_gives_twice_identity_hessian() {
        // Degenerate configuration: square B_qp = I with unit terminal
        // weight and zero input weight collapses H to 2·I.
        let pred = PredictionMatrices {
            a_qp: DMatrix::zeros(4, 4),
            b_qp: DMatrix::identity(4, 4),
            c_qp: DVector::zeros(4),
        };
        let mut c = cfg(1, 4);
        c.r = 0.0;
        let qp = condense(
            &pred,
            &c,
            &Vector4::zeros(),
            &DVector::zeros(4),
            &DVector::zeros(4),
        )
        .unwrap();
        assert_relative_eq!(qp.h, DMatrix::identity(4, 4) * 2.0, epsilon = 1e-14);
        assert_eq!(qp.f, DVector::zeros(4));
    }

    #[test]
    fn on_reference_cost_has_zero_gradient_and_zero_minimizer() {
        let mut rng = StdRng::seed_from_u64(4);
        let model = random_model(&mut rng);
        let c = cfg(4, 2);
        let pred = build_prediction(&model, &c);
        let x0 = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let x_ref = &pred.a_qp * x0 + &pred.c_qp;
        let qp = condense(&pred, &c, &x0, &x_ref, &DVector::zeros(2)).unwrap();
        assert!(qp.f.abs().max() < 1e-12);
        let sol = solve_qp(&qp, None).unwrap();
        assert!(sol.u.abs().max() < 1e-10);
    }

    #[test]
    fn two_step_scalar_condensation_matches_hand_formulas() {
        // Scalar plant x⁺ = a·x + b·u embedded in the 4-state container with
        // zero weight on the dummy states.
        let (a, b, q, p, r, x0, n) = (0.9, 0.5, 2.0, 3.0, 0.1, 1.0, 2);
        let model = LinearModel {
            axis: Axis::Longitudinal,
            a: Matrix4::zeros(),
            b: Vector4::zeros(),
            c: Vector4::zeros(),
            a_d: Matrix4::from_partial_diagonal(&[a, 0.0, 0.0, 0.0]),
            b_d: Vector4::new(b, 0.0, 0.0, 0.0),
            c_d: Vector4::zeros(),
            t_s: 0.02,
        };
        let c = MPCConfig {
            n_p: n,
            n_c: n,
            q: Matrix4::from_partial_diagonal(&[q, 0.0, 0.0, 0.0]),
            p: Matrix4::from_partial_diagonal(&[p, 0.0, 0.0, 0.0]),
            r,
            u_min: -10.0,
            u_max: 10.0,
            du_max: None,
        };
        let pred = build_prediction(&model, &c);
        let qp = condense(
            &pred,
            &c,
            &Vector4::new(x0, 0.0, 0.0, 0.0),
            &DVector::zeros(8),
            &DVector::zeros(2),
        )
        .unwrap();
        // Hand condensation: predictions x1 = a·x0 + b·u0, x2 = a²·x0 +
        // ab·u0 + b·u1; cost q·x1² + p·x2² + r(u0² + u1²).
        let h00 = 2.0 * (q * b * b + p * (a * b) * (a * b) + r);
        let h01 = 2.0 * (p * (a * b) * b);
        let h11 = 2.0 * (p * b * b + r);
        let f0 = 2.0 * (q * b * (a * x0) + p * (a * b) * (a * a * x0));
        let f1 = 2.0 * (p * b * (a * a * x0));
        assert_relative_eq!(qp.h[(0, 0)], h00, epsilon = 1e-14);
        assert_relative_eq!(qp.h[(0, 1)], h01, epsilon = 1e-14);
        assert_relative_eq!(qp.h[(1, 0)], h01, epsilon = 1e-14);
        assert_relative_eq!(qp.h[(1, 1)], h11, epsilon = 1e-14);
        assert_relative_eq!(qp.f[0], f0, epsilon = 1e-14);
        assert_relative_eq!(qp.f[1], f1, epsilon = 1e-14);
    }

    #[test]
    fn unconstrained_solve_is_newton_step() {
        let mut rng = StdRng::seed_from_u64(5);
        let base = random_box_qp(&mut rng, 5);
        let qp = QPProblem {
            d: DMatrix::zeros(0, 5),
            d_lo: DVector::zeros(0),
            d_hi: DVector::zeros(0),
            ..base
        };
        let sol = solve_qp(&qp, None).unwrap();
        let newton = -Cholesky::new(qp.h.clone()).unwrap().solve(&qp.f);
        assert_relative_eq!(sol.u, newton, epsilon = 1e-10);
        let (s, fe, co) = kkt_residual(&qp, &sol.u, &sol.lambda);
        assert!(s < 1e-10);
        assert_eq!(fe, 0.0);
        assert_eq!(co, 0.0);
    }

    #[test]
    fn one_dimensional_lower_bound_clips_with_unit_multiplier() {
        // min ½u² + u over u ≥ 0: unconstrained optimum −1 clips to 0 and
        // the bound carries multiplier magnitude 1 (negative: lower side).
        let qp = QPProblem {
            h: DMatrix::from_element(1, 1, 1.0),
            f: DVector::from_element(1, 1.0),
            d: DMatrix::from_element(1, 1, 1.0),
            d_lo: DVector::from_element(1, 0.0),
            d_hi: DVector::from_element(1, f64::INFINITY),
        };
        let sol = solve_qp(&qp, None).unwrap();
        assert_relative_eq!(sol.u[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(sol.lambda[0], -1.0, epsilon = 1e-12);
        let (s, fe, co) = kkt_residual(&qp, &sol.u, &sol.lambda);
        assert!(s < 1e-9 && fe < 1e-10 && co < 1e-9);
    }

    #[test]
    fn random_box_qps_match_enumeration_oracle() {
        let mut rng = StdRng::seed_from_u64(6);
        for trial in 0..200 {
            let n = rng.gen_range(1..=4);
            let qp = random_box_qp(&mut rng, n);
            let sol = solve_qp(&qp, None).unwrap();
            let oracle = enumerate_box_min(&qp);
            assert!(
                (&sol.u - &oracle).abs().max() < 1e-8,
                "trial {trial}: solver {:?} vs oracle {:?}",
                sol.u,
                oracle
            );
            let (s, fe, co) = kkt_residual(&qp, &sol.u, &sol.lambda);
            assert!(s < 1e-8 && fe < 1e-10 && co < 1e-8, "trial {trial}: ({s}, {fe}, {co})");
        }
    }

    #[test]
    fn warm_start_reproduces_cold_solution() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(2..=6);
            let qp = random_box_qp(&mut rng, n);
            let cold = solve_qp(&qp, None).unwrap();
            let warm_point = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let warm = solve_qp(&qp, Some(&warm_point)).unwrap();
            assert!((&cold.u - &warm.u).abs().max() < 1e-9);
            // Warm-starting at the optimum converges immediately.
            let instant = solve_qp(&qp, Some(&cold.u)).unwrap();
            assert!((&instant.u - &cold.u).abs().max() < 1e-9);
        }
    }

    #[test]
    fn solution_beats_random_feasible_probes() {
        let mut rng = StdRng::seed_from_u64(8);
        let qp = random_box_qp(&mut rng, 5);
        let sol = solve_qp(&qp, None).unwrap();
        let best = objective(&qp, &sol.u);
        for _ in 0..100 {
            let probe = DVector::from_fn(5, |i, _| rng.gen_range(qp.d_lo[i]..qp.d_hi[i]));
            assert!(best <= objective(&qp, &probe) + 1e-12);
        }
    }

    #[test]
    fn condensed_qp_minimizes_the_receding_horizon_cost() {
        // Two meaningful states, three prediction steps, two inputs: the
        // condensed minimizer must match a brute-force grid search on the
        // original stage cost evaluated through the recurrence.
        let model = LinearModel {
            axis: Axis::Longitudinal,
            a: Matrix4::zeros(),
            b: Vector4::zeros(),
            c: Vector4::zeros(),
            a_d: {
                let mut a = Matrix4::zeros();
                a[(0, 0)] = 1.0;
                a[(0, 1)] = 0.1;
                a[(1, 0)] = -0.2;
                a[(1, 1)] = 0.95;
                a
            },
            b_d: Vector4::new(0.005, 0.1, 0.0, 0.0),
            c_d: Vector4::new(0.001, -0.002, 0.0, 0.0),
            t_s: 0.02,
        };
        let c = MPCConfig {
            n_p: 3,
            n_c: 2,
            q: Matrix4::from_partial_diagonal(&[5.0, 1.0, 0.0, 0.0]),
            p: Matrix4::from_partial_diagonal(&[10.0, 2.0, 0.0, 0.0]),
            r: 0.5,
            u_min: -1.0,
            u_max: 1.0,
            du_max: None,
        };
        let x0 = Vector4::new(0.5, -0.3, 0.0, 0.0);
        let pred = build_prediction(&model, &c);
        let qp = condense(&pred, &c, &x0, &DVector::zeros(12), &DVector::zeros(2)).unwrap();
        let sol = solve_qp(&qp, None).unwrap();

        let stage_cost = |u: &[f64]| {
            let xs = simulate(&model, &x0, u, 3);
            let mut j = 0.0;
            for (k, x) in xs.iter().enumerate() {
                let w = if k == 2 { &c.p } else { &c.q };
                j += (x.transpose() * w * x)[(0, 0)];
            }
            j + c.r * (u[0] * u[0] + u[1] * u[1])
        };
        let mut best = f64::INFINITY;
        let mut best_u = [0.0, 0.0];
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let u = [
                    -1.0 + 2.0 * i as f64 / steps as f64,
                    -1.0 + 2.0 * j as f64 / steps as f64,
                ];
                let cost = stage_cost(&u);
                if cost < best {
                    best = cost;
                    best_u = u;
                }
            }
        }
        let solver_cost = stage_cost(&[sol.u[0], sol.u[1]]);
        assert!(solver_cost <= best + 1e-12, "{solver_cost} vs grid {best}");
        assert!((sol.u[0] - best_u[0]).abs() < 2.5 / steps as f64);
        assert!((sol.u[1] - best_u[1]).abs() < 2.5 / steps as f64);
    }

    #[test]
    fn rate_rows_bind_the_input_difference() {
        // min (u0 − 2)² + u1² with |u1 − u0| ≤ 0.5 and box ±1.5: the
        // stationarity balance puts u = [1.25, 0.75] on the rate bound.
        let mut d = DMatrix::zeros(3, 2);
        d[(0, 0)] = 1.0;
        d[(1, 1)] = 1.0;
        d[(2, 0)] = -1.0;
        d[(2, 1)] = 1.0;
        let qp = QPProblem {
            h: DMatrix::identity(2, 2) * 2.0,
            f: DVector::from_vec(vec![-4.0, 0.0]),
            d,
            d_lo: DVector::from_vec(vec![-1.5, -1.5, -0.5]),
            d_hi: DVector::from_vec(vec![1.5, 1.5, 0.5]),
        };
        let sol = solve_qp(&qp, None).unwrap();
        assert_relative_eq!(sol.u[0], 1.25, epsilon = 1e-10);
        assert_relative_eq!(sol.u[1], 0.75, epsilon = 1e-10);
        assert!(sol.lambda[2] < 0.0, "difference row should bind at its lower bound");
        let (s, fe, co) = kkt_residual(&qp, &sol.u, &sol.lambda);
        assert!(s < 1e-9 && fe < 1e-10 && co < 1e-9);
    }

    #[test]
    fn condense_emits_box_then_difference_rows() {
        let mut rng = StdRng::seed_from_u64(9);
        let model = random_model(&mut rng);
        let mut c = cfg(4, 3);
        c.du_max = Some(0.1);
        let pred = build_prediction(&model, &c);
        let mut qp = condense(&pred, &c, &Vector4::zeros(), &DVector::zeros(16), &DVector::zeros(3)).unwrap();
        assert_eq!(qp.d.nrows(), 5);
        for k in 0..3 {
            assert_eq!(qp.d[(k, k)], 1.0);
            assert_eq!(qp.d_lo[k], -10.0);
            assert_eq!(qp.d_hi[k], 10.0);
        }
        assert_eq!(qp.d[(3, 0)], -1.0);
        assert_eq!(qp.d[(3, 1)], 1.0);
        assert_eq!(qp.d_lo[3], -0.1);
        assert_eq!(qp.d_hi[3], 0.1);
        qp.limit_first_step(9.97, 0.1);
        assert_relative_eq!(qp.d_lo[0], 9.87, epsilon = 1e-14);
        assert_eq!(qp.d_hi[0], 10.0);
    }

    #[test]
    fn conflicting_bounds_report_infeasible() {
        let mut d = DMatrix::zeros(2, 1);
        d[(0, 0)] = 1.0;
        d[(1, 0)] = 1.0;
        let qp = QPProblem {
            h: DMatrix::identity(1, 1),
            f: DVector::zeros(1),
            d,
            d_lo: DVector::from_vec(vec![1.0, -3.0]),
            d_hi: DVector::from_vec(vec![2.0, 0.0]),
        };
        assert_eq!(solve_qp(&qp, None).unwrap_err(), QPError::Infeasible);
    }

    #[test]
    fn general_constraint_row_is_honored() {
        // min ‖u − (1,1)‖² with u0 + u1 ≤ 0.5: symmetric optimum (¼, ¼).
        let qp = QPProblem {
            h: DMatrix::identity(2, 2) * 2.0,
            f: DVector::from_vec(vec![-2.0, -2.0]),
            d: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            d_lo: DVector::from_element(1, f64::NEG_INFINITY),
            d_hi: DVector::from_element(1, 0.5),
        };
        let sol = solve_qp(&qp, None).unwrap();
        assert_relative_eq!(sol.u[0], 0.25, epsilon = 1e-10);
        assert_relative_eq!(sol.u[1], 0.25, epsilon = 1e-10);
        assert!(sol.lambda[0] > 0.0);
    }

    #[test]
    fn perturbing_the_optimum_raises_the_stationarity_residual() {
        let mut rng = StdRng::seed_from_u64(10);
        let qp = random_box_qp(&mut rng, 4);
        let sol = solve_qp(&qp, None).unwrap();
        // Nudge along a free coordinate (an inactive box row).
        let free = (0..4)
            .find(|&i| sol.lambda[i] == 0.0)
            .expect("some coordinate should be free");
        let mut u = sol.u.clone();
        u[free] += 1e-3;
        let (s, _, _) = kkt_residual(&qp, &u, &sol.lambda);
        assert!(s > 1e-4, "stationarity {s} should reflect the perturbation");
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut c = cfg(5, 6);
        assert!(matches!(c.validate(), Err(QPError::InvalidConfig { .. })));
        c.n_c = 3;
        c.validate().unwrap();
        c.r = 0.0;
        assert!(matches!(c.validate(), Err(QPError::InvalidConfig { .. })));
        c.r = 0.1;
        c.q[(0, 1)] = 0.2; // asymmetric
        assert!(matches!(c.validate(), Err(QPError::InvalidConfig { .. })));
        c.q[(0, 1)] = 0.0;
        c.q[(0, 0)] = -1.0; // indefinite
        assert!(matches!(c.validate(), Err(QPError::InvalidConfig { .. })));
    }
}
