//! Extended-state observer: estimates a constant input-channel disturbance
//! alongside the model states so the velocity loop can cancel model
//! mismatch.
//!
//! The per-axis model is first reduced to the states that are measured or
//! feed the measured dynamics (the longitudinal position never does — its
//! column in A_d is zero — so the reduced longitudinal state is
//! [α, α̇, ẋ]). The reduced state is augmented with n_d constant-disturbance
//! states that enter the named acceleration rows through a T_s-scaled
//! column, mirroring how an unmodeled force would integrate over one step:
//!
//!   [x; d]⁺ = [[A_red, T_s·E], [0, I]]·[x; d] + [B_red; 0]·u + [C_red; 0]
//!
//! Gains come from pole placement on the dual system: solving the Sylvester
//! equation AᵀX − XΛ = CᵀG for a seeded random G gives L = (G·X⁻¹)ᵀ with
//! the eigenvalues of (A_a − L·C_a) equal to those of Λ. Λ is assembled from
//! real Jordan blocks so repeated poles remain placeable, and the result is
//! verified against an eigensolver before being returned. The update is a
//! predictor step x̂⁺ = A_a·x̂ + B_a·u + L·(y − C_a·x̂), so the estimation
//! error evolves by (A_a − L·C_a).

use crate::linmodel::LinearModel;
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::error::Error;
use std::fmt;

/// Default discrete observer pole (applied at every state unless
/// reconfigured).
pub const DEFAULT_OBSERVER_POLE: f64 = 0.8;

/// Reduced-and-augmented observer model for one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    /// (n_red + n_d) square transition matrix.
    pub a_a: DMatrix<f64>,
    pub b_a: DVector<f64>,
    /// Affine offsets carried over from the model's C_d (zero on the
    /// disturbance rows).
    pub aff_a: DVector<f64>,
    /// p × (n_red + n_d) output map.
    pub c_a: DMatrix<f64>,
    pub n_d: usize,
    /// Full-model indices of the retained states, ascending.
    pub kept: Vec<usize>,
    /// Full-model acceleration rows the disturbances act on.
    pub channels: Vec<usize>,
    pub t_s: f64,
}

/// Observer estimate: reduced model states, disturbance states, and the
/// fixed correction gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub x_hat: DVector<f64>,
    pub d_hat: DVector<f64>,
    /// (n_red + n_d) × p correction gain.
    pub l: DMatrix<f64>,
}

impl ObserverState {
    /// Zero-initialized observer with gains placed at `poles`.
    pub fn new(aug: &AugmentedModel, poles: &[Complex<f64>]) -> Result<Self, EsoError> {
        let l = design_gains(aug, poles)?;
        let n_red = aug.a_a.nrows() - aug.n_d;
        Ok(ObserverState {
            x_hat: DVector::zeros(n_red),
            d_hat: DVector::zeros(aug.n_d),
            l,
        })
    }
}

/// Errors from augmentation, gain design, and updates.
#[derive(Debug, Clone, PartialEq)]
pub enum EsoError {
    /// A disturbance channel does not name an acceleration row.
    BadChannel { index: usize },
    /// No measured outputs were given, or an index is out of range.
    BadOutputs,
    /// The augmented pair (A_a, C_a) fails the numeric observability check.
    UnobservableAugmentation { sigma_min: f64 },
    /// A requested pole lies on or outside the unit circle, or complex
    /// poles do not come in conjugate pairs, or the count is wrong.
    InvalidPoles { reason: &'static str },
    /// The Sylvester construction could not realize the requested spectrum.
    PlacementFailed,
    /// Vector arguments have inconsistent lengths.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

impl fmt::Display for EsoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EsoError::BadChannel { index } => {
                write!(f, "disturbance channel {index} is not an acceleration row")
            }
            EsoError::BadOutputs => write!(f, "measured output set is empty or out of range"),
            EsoError::UnobservableAugmentation { sigma_min } => write!(
                f,
                "augmented pair is unobservable (smallest singular value {sigma_min:.3e})"
            ),
            EsoError::InvalidPoles { reason } => write!(f, "invalid observer poles: {reason}"),
            EsoError::PlacementFailed => write!(f, "observer pole placement failed"),
            EsoError::DimensionMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected length {expected}, got {got}"),
        }
    }
}

impl Error for EsoError {}

/// Reduce `model` to the influencing-state subsystem and augment it with
/// one constant-disturbance state per entry of `channels`.
///
/// `measured` lists the full-model state indices that are measured, in
/// output order; `channels` lists the acceleration rows (odd indices) the
/// disturbances act on. States are retained when they are measured or when
/// they influence a retained state's dynamics, so the reduction is exact.
pub fn augment(
    model: &LinearModel,
    channels: &[usize],
    measured: &[usize],
) -> Result<AugmentedModel, EsoError> {
    let n = 4;
    if measured.is_empty() || measured.iter().any(|&i| i >= n) {
        return Err(EsoError::BadOutputs);
    }
    for &ch in channels {
        if ch >= n || ch % 2 == 0 {
            return Err(EsoError::BadChannel { index: ch });
        }
    }

    // Closure of the measured set under dynamic influence.
    let mut kept: Vec<usize> = measured.to_vec();
    kept.sort_unstable();
    kept.dedup();
    loop {
        let mut grew = false;
        for row in kept.clone() {
            for col in 0..n {
                if model.a_d[(row, col)].abs() > 1e-12 && !kept.contains(&col) {
                    kept.push(col);
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
        kept.sort_unstable();
    }
    kept.sort_unstable();

    let k = kept.len();
    let n_d = channels.len();
    let pos = |full: usize| kept.iter().position(|&i| i == full);

    let mut a_a = DMatrix::zeros(k + n_d, k + n_d);
    let mut b_a = DVector::zeros(k + n_d);
    let mut aff_a = DVector::zeros(k + n_d);
    for (ri, &r) in kept.iter().enumerate() {
        for (ci, &c) in kept.iter().enumerate() {
            a_a[(ri, ci)] = model.a_d[(r, c)];
        }
        b_a[ri] = model.b_d[r];
        aff_a[ri] = model.c_d[r];
    }
    for (j, &ch) in channels.iter().enumerate() {
        a_a[(k + j, k + j)] = 1.0;
        if let Some(ri) = pos(ch) {
            a_a[(ri, k + j)] = model.t_s;
        }
    }

    let p = measured.len();
    let mut c_a = DMatrix::zeros(p, k + n_d);
    for (row, &mi) in measured.iter().enumerate() {
        let ci = pos(mi).expect("measured states are always kept");
        c_a[(row, ci)] = 1.0;
    }

    // Numeric observability: stack C_a·A_a^j and require full column rank.
    let dim = k + n_d;
    let mut obs = DMatrix::zeros(p * dim, dim);
    let mut power = DMatrix::identity(dim, dim);
    for j in 0..dim {
        obs.view_mut((p * j, 0), (p, dim)).copy_from(&(&c_a * &power));
        power = &power * &a_a;
    }
    let sv = obs.svd(false, false).singular_values;
    let sigma_min = sv.min();
    if sv.len() < dim || sigma_min <= 1e-8 {
        return Err(EsoError::UnobservableAugmentation { sigma_min });
    }

    Ok(AugmentedModel {
        a_a,
        b_a,
        aff_a,
        c_a,
        n_d,
        kept,
        channels: channels.to_vec(),
        t_s: model.t_s,
    })
}

/// Group requested poles into distinct real values and conjugate pairs with
/// multiplicities, validating modulus and pairing.
fn group_poles(
    poles: &[Complex<f64>],
) -> Result<(Vec<(f64, usize)>, Vec<(Complex<f64>, usize)>), EsoError> {
    for p in poles {
        if p.norm() >= 1.0 {
            return Err(EsoError::InvalidPoles {
                reason: "modulus must be < 1",
            });
        }
    }
    let mut reals: Vec<f64> = Vec::new();
    let mut upper: Vec<Complex<f64>> = Vec::new();
    let mut lower: Vec<Complex<f64>> = Vec::new();
    for p in poles {
        if p.im.abs() < 1e-12 {
            reals.push(p.re);
        } else if p.im > 0.0 {
            upper.push(*p);
        } else {
            lower.push(*p);
        }
    }
    if upper.len() != lower.len() {
        return Err(EsoError::InvalidPoles {
            reason: "complex poles must come in conjugate pairs",
        });
    }
    let mut lower_left = lower.clone();
    for u in &upper {
        match lower_left
            .iter()
            .position(|l| (l.conj() - u).norm() < 1e-9)
        {
            Some(i) => {
                lower_left.remove(i);
            }
            None => {
                return Err(EsoError::InvalidPoles {
                    reason: "complex poles must come in conjugate pairs",
                })
            }
        }
    }

    let mut real_groups: Vec<(f64, usize)> = Vec::new();
    reals.sort_by(f64::total_cmp);
    for r in reals {
        match real_groups.last_mut() {
            Some((v, m)) if (*v - r).abs() < 1e-9 => *m += 1,
            _ => real_groups.push((r, 1)),
        }
    }
    let mut pair_groups: Vec<(Complex<f64>, usize)> = Vec::new();
    upper.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    for u in upper {
        match pair_groups.last_mut() {
            Some((v, m)) if (*v - u).norm() < 1e-9 => *m += 1,
            _ => pair_groups.push((u, 1)),
        }
    }
    Ok((real_groups, pair_groups))
}

/// Split a multiplicity into `chains` near-equal chain lengths.
fn chain_sizes(multiplicity: usize, chains: usize) -> Vec<usize> {
    let chains = chains.clamp(1, multiplicity);
    let base = multiplicity / chains;
    let extra = multiplicity % chains;
    (0..chains)
        .map(|i| base + usize::from(i < extra))
        .collect()
}

/// Assemble the real block form of the requested spectrum. A multiplicity-m
/// value is split across min(m, p) Jordan chains (p measured outputs can
/// support that many independent chains); keeping chains short keeps the
/// realized eigenvalues well conditioned. Conjugate pairs become 2×2
/// rotation blocks chained by identity blocks.
fn lambda_matrix(
    real_groups: &[(f64, usize)],
    pair_groups: &[(Complex<f64>, usize)],
    dim: usize,
    outputs: usize,
) -> DMatrix<f64> {
    let mut lam = DMatrix::zeros(dim, dim);
    let mut at = 0;
    for &(r, m) in real_groups {
        for size in chain_sizes(m, outputs) {
            for i in 0..size {
                lam[(at + i, at + i)] = r;
                if i + 1 < size {
                    lam[(at + i, at + i + 1)] = 1.0;
                }
            }
            at += size;
        }
    }
    for &(p, m) in pair_groups {
        for size in chain_sizes(m, (outputs / 2).max(1)) {
            for i in 0..size {
                let b = at + 2 * i;
                lam[(b, b)] = p.re;
                lam[(b, b + 1)] = p.im;
                lam[(b + 1, b)] = -p.im;
                lam[(b + 1, b + 1)] = p.re;
                if i + 1 < size {
                    lam[(b, b + 2)] = 1.0;
                    lam[(b + 1, b + 3)] = 1.0;
                }
            }
            at += 2 * size;
        }
    }
    lam
}

/// Solve AᵀX − XΛ = CᵀG for X via the Kronecker-product linear system.
fn solve_sylvester(
    a_t: &DMatrix<f64>,
    lam: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let n = a_t.nrows();
    let mut big = DMatrix::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            let row = i + n * j;
            for kcol in 0..n {
                big[(row, kcol + n * j)] += a_t[(i, kcol)];
            }
            for l in 0..n {
                big[(row, i + n * l)] -= lam[(l, j)];
            }
        }
    }
    let mut vec_rhs = DVector::zeros(n * n);
    for j in 0..n {
        for i in 0..n {
            vec_rhs[i + n * j] = rhs[(i, j)];
        }
    }
    let sol = big.lu().solve(&vec_rhs)?;
    let mut x = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            x[(i, j)] = sol[i + n * j];
        }
    }
    Some(x)
}

/// Place the eigenvalues of (A_a − L·C_a) at `poles` and return L.
///
/// Requires exactly n_red + n_d poles, all strictly inside the unit circle,
/// complex ones in conjugate pairs. The construction retries a few seeded
/// right-hand sides and verifies the achieved spectrum with an eigensolver
/// to within 1e-6 before returning.
pub fn design_gains(aug: &AugmentedModel, poles: &[Complex<f64>]) -> Result<DMatrix<f64>, EsoError> {
    let dim = aug.a_a.nrows();
    if poles.len() != dim {
        return Err(EsoError::InvalidPoles {
            reason: "pole count must equal the augmented state dimension",
        });
    }
    let (real_groups, pair_groups) = group_poles(poles)?;
    let lam = lambda_matrix(&real_groups, &pair_groups, dim, aug.c_a.nrows());
    let a_t = aug.a_a.transpose();
    let c_t = aug.c_a.transpose();
    let p = aug.c_a.nrows();

    for attempt in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xE50 + attempt);
        let g = DMatrix::from_fn(p, dim, |_, _| rng.gen_range(-1.0..1.0));
        let Some(x) = solve_sylvester(&a_t, &lam, &(&c_t * &g)) else {
            // The Kronecker operator is singular iff spec(A) meets the
            // requested spectrum; no G can fix that.
            return Err(EsoError::PlacementFailed);
        };
        let Some(x_inv) = x.try_inverse() else {
            continue;
        };
        let l = (&g * x_inv).transpose();
        let closed = &aug.a_a - &l * &aug.c_a;
        if spectrum_matches(&closed, poles, 1e-6) {
            return Ok(l);
        }
    }
    Err(EsoError::PlacementFailed)
}

/// Multiset-match the eigenvalues of `m` against `expected` within `tol`.
fn spectrum_matches(m: &DMatrix<f64>, expected: &[Complex<f64>], tol: f64) -> bool {
    let eigs = m.clone().complex_eigenvalues();
    let mut remaining: Vec<Complex<f64>> = eigs.iter().copied().collect();
    for want in expected {
        match remaining
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (*a - want).norm().total_cmp(&(*b - want).norm()))
        {
            Some((i, got)) if (got - want).norm() <= tol => {
                remaining.remove(i);
            }
            _ => return false,
        }
    }
    true
}

/// One predictor step: propagate through the augmented model, then correct
/// with the measurement innovation.
pub fn eso_update(
    obs: &ObserverState,
    aug: &AugmentedModel,
    u: f64,
    y: &DVector<f64>,
) -> Result<ObserverState, EsoError> {
    let dim = aug.a_a.nrows();
    let n_red = dim - aug.n_d;
    if obs.x_hat.len() != n_red {
        return Err(EsoError::DimensionMismatch {
            what: "state estimate",
            expected: n_red,
            got: obs.x_hat.len(),
        });
    }
    if y.len() != aug.c_a.nrows() {
        return Err(EsoError::DimensionMismatch {
            what: "measurement",
            expected: aug.c_a.nrows(),
            got: y.len(),
        });
    }
    let mut z = DVector::zeros(dim);
    z.rows_mut(0, n_red).copy_from(&obs.x_hat);
    z.rows_mut(n_red, aug.n_d).copy_from(&obs.d_hat);
    let innovation = y - &aug.c_a * &z;
    let next = &aug.a_a * &z + &aug.b_a * u + &aug.aff_a + &obs.l * innovation;
    Ok(ObserverState {
        x_hat: next.rows(0, n_red).into_owned(),
        d_hat: next.rows(n_red, aug.n_d).into_owned(),
        l: obs.l.clone(),
    })
}

/// Fold a disturbance estimate into the model's affine terms: each channel
/// row gains d̂ on the continuous offset and d̂·T_s on the discrete one.
/// A_d and B_d are untouched.
pub fn apply_disturbance(
    model: &LinearModel,
    aug: &AugmentedModel,
    d_hat: &DVector<f64>,
) -> Result<LinearModel, EsoError> {
    if d_hat.len() != aug.n_d {
        return Err(EsoError::DimensionMismatch {
            what: "disturbance estimate",
            expected: aug.n_d,
            got: d_hat.len(),
        });
    }
    let mut out = model.clone();
    for (j, &ch) in aug.channels.iter().enumerate() {
        out.c[ch] += d_hat[j];
        out.c_d[ch] += d_hat[j] * model.t_s;
    }
    Ok(out)
}
