//! Feedforward reference generator: a small [2, h, 1] network that maps a
//! commanded speed and roll angle to the pendulum lean angle that balances
//! the turn, trained with Levenberg-Marquardt on data from the transverse
//! steady-state solver.
//!
//! The hidden layer is tanh, the output linear. Inputs and outputs are
//! normalized to [−1, 1] over the training split (affine maps stored with
//! the weights) to keep the tanh units out of saturation. Training data
//! comes from solving the steady turn balance m_p·g·l·sin β = F_fy·r for β
//! by bisection at each (v, φ) grid point — at a steady turn the lateral
//! friction force's roll moment must be carried entirely by the offset
//! pendulum weight.

use crate::dynamics::{centripetal_friction, RobotParams};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::error::Error;
use std::fmt;
use std::fs;
use std::path::Path;

/// One training point: commanded speed, commanded roll, balancing lean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub v: f64,
    pub phi: f64,
    pub beta_d: f64,
}

/// Split assignment of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Samples with a reproducible split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub assignment: Vec<Split>,
    pub seed: u64,
}

impl Dataset {
    pub fn subset(&self, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .zip(&self.assignment)
            .filter(|(_, a)| **a == split)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for a in &self.assignment {
            match a {
                Split::Train => c.0 += 1,
                Split::Validation => c.1 += 1,
                Split::Test => c.2 += 1,
            }
        }
        c
    }
}

/// Network weights and the normalization maps baked in at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct MLPParams {
    pub hidden: usize,
    /// h×2 input weights.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// 1×h output weights.
    pub w2: DMatrix<f64>,
    pub b2: f64,
    /// Input features map to [−1, 1] via (x − center)/half.
    pub in_center: [f64; 2],
    pub in_half: [f64; 2],
    /// Output denormalizes via y·half + center.
    pub out_center: f64,
    pub out_half: f64,
    /// Seed the weights were initialized from.
    pub seed: u64,
}

impl MLPParams {
    /// β_d = denorm(W2·tanh(W1·norm([v, φ]) + b1) + b2).
    pub fn forward(&self, v: f64, phi: f64) -> f64 {
        let (out_n, _) = self.forward_normalized(self.normalize_input(v, phi));
        out_n * self.out_half + self.out_center
    }

    fn normalize_input(&self, v: f64, phi: f64) -> [f64; 2] {
        [
            (v - self.in_center[0]) / self.in_half[0],
            (phi - self.in_center[1]) / self.in_half[1],
        ]
    }

    /// Normalized output and hidden activations.
    fn forward_normalized(&self, u: [f64; 2]) -> (f64, DVector<f64>) {
        let uv = DVector::from_row_slice(&u);
        let a = (&self.w1 * uv + &self.b1).map(f64::tanh);
        let out = (&self.w2 * &a)[(0, 0)] + self.b2;
        (out, a)
    }

    /// Save as a flat JSON document (row-major weight arrays). The write is
    /// atomic: a sibling temp file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<(), MLPError> {
        let doc = MLPDocument::from(self);
        let text = serde_json::to_string_pretty(&doc).map_err(|e| MLPError::Persistence {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let tmp = path.with_extension("json.tmp");
        let io_err = |e: std::io::Error| MLPError::Persistence {
            path: path.display().to_string(),
            detail: e.to_string(),
        };
        fs::write(&tmp, text).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MLPError> {
        let text = fs::read_to_string(path).map_err(|e| MLPError::Persistence {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let doc: MLPDocument = serde_json::from_str(&text).map_err(|e| MLPError::Persistence {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        doc.try_into().map_err(|detail: String| MLPError::Persistence {
            path: path.display().to_string(),
            detail,
        })
    }
}

/// Flat serialized form of [`MLPParams`].
#[derive(Debug, Serialize, Deserialize)]
struct MLPDocument {
    layer_sizes: [usize; 3],
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    in_center: [f64; 2],
    in_half: [f64; 2],
    out_center: f64,
    out_half: f64,
    seed: u64,
}

impl From<&MLPParams> for MLPDocument {
    fn from(p: &MLPParams) -> Self {
        let row_major = |m: &DMatrix<f64>| {
            let mut v = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    v.push(m[(i, j)]);
                }
            }
            v
        };
        MLPDocument {
            layer_sizes: [2, p.hidden, 1],
            w1: row_major(&p.w1),
            b1: p.b1.iter().copied().collect(),
            w2: row_major(&p.w2),
            b2: p.b2,
            in_center: p.in_center,
            in_half: p.in_half,
            out_center: p.out_center,
            out_half: p.out_half,
            seed: p.seed,
        }
    }
}

impl TryFrom<MLPDocument> for MLPParams {
    type Error = String;

    fn try_from(d: MLPDocument) -> Result<Self, String> {
        let h = d.layer_sizes[1];
        if d.layer_sizes[0] != 2 || d.layer_sizes[2] != 1 {
            return Err("layer sizes must be [2, h, 1]".into());
        }
        if d.w1.len() != 2 * h || d.b1.len() != h || d.w2.len() != h {
            return Err("weight array lengths disagree with layer sizes".into());
        }
        if d.in_half.iter().any(|&x| x == 0.0) || d.out_half == 0.0 {
            return Err("normalization scales must be nonzero".into());
        }
        Ok(MLPParams {
            hidden: h,
            w1: DMatrix::from_row_slice(h, 2, &d.w1),
            b1: DVector::from_vec(d.b1),
            w2: DMatrix::from_row_slice(1, h, &d.w2),
            b2: d.b2,
            in_center: d.in_center,
            in_half: d.in_half,
            out_center: d.out_center,
            out_half: d.out_half,
            seed: d.seed,
        })
    }
}

/// Per-epoch training record (MSE in output units, not normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub lambda: f64,
}

/// Errors from splitting, training, data generation, and persistence.
#[derive(Debug, Clone, PartialEq)]
pub enum MLPError {
    /// Split fractions do not sum to 1.
    BadFractions { sum: f64 },
    /// The training split contains no samples, or h < 1.
    EmptyTrainSplit,
    /// The damped normal equations stayed unsolvable up to λ = 1e10.
    JacobianSingular,
    /// The steady-turn balance has no solution at this grid point.
    NoSteadyState { v: f64, phi: f64 },
    Persistence { path: String, detail: String },
}

impl fmt::Display for MLPError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MLPError::BadFractions { sum } => {
                write!(f, "split fractions must sum to 1, got {sum}")
            }
            MLPError::EmptyTrainSplit => write!(f, "training split is empty or hidden width < 1"),
            MLPError::JacobianSingular => {
                write!(f, "damped normal equations unsolvable up to lambda = 1e10")
            }
            MLPError::NoSteadyState { v, phi } => write!(
                f,
                "no steady-turn balance at v = {v} m/s, phi = {phi} rad (pendulum cannot hold it)"
            ),
            MLPError::Persistence { path, detail } => write!(f, "{path}: {detail}"),
        }
    }
}

impl Error for MLPError {}

/// Randomly permute the samples by seed, then assign contiguous blocks by
/// fraction with largest-remainder rounding (ties go to the later split).
pub fn split_dataset(
    samples: Vec<Sample>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Dataset, MLPError> {
    let sum = fractions.0 + fractions.1 + fractions.2;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(MLPError::BadFractions { sum });
    }
    let n = samples.len();
    let fracs = [fractions.0, fractions.1, fractions.2];
    let exact: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // Largest remainder first; equal remainders favor the later split.
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(b.cmp(&a))
    });
    for i in order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }

    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let mut assignment = vec![Split::Train; n];
    for (rank, &idx) in perm.iter().enumerate() {
        assignment[idx] = if rank < counts[0] {
            Split::Train
        } else if rank < counts[0] + counts[1] {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(Dataset {
        samples,
        assignment,
        seed,
    })
}

/// Mean squared error of the network over `samples`, in output units.
pub fn mse(params: &MLPParams, samples: &[&Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| {
            let e = params.forward(s.v, s.phi) - s.beta_d;
            e * e
        })
        .sum::<f64>()
        / samples.len() as f64
}

/// Solve the damped normal equations (JᵀJ + λI)δ = −Jᵀr.
fn damped_step(j: &DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let mut jtj = j.transpose() * j;
    for i in 0..jtj.nrows() {
        jtj[(i, i)] += lambda;
    }
    let rhs = -(j.transpose() * r);
    Cholesky::new(jtj).map(|c| c.solve(&rhs))
}

/// Flatten the trainable parameters in a fixed order: W1 row-major, b1, W2,
/// b2.
fn pack(p: &MLPParams) -> DVector<f64> {
    let h = p.hidden;
    let mut theta = DVector::zeros(4 * h + 1);
    for j in 0..h {
        theta[2 * j] = p.w1[(j, 0)];
        theta[2 * j + 1] = p.w1[(j, 1)];
        theta[2 * h + j] = p.b1[j];
        theta[3 * h + j] = p.w2[(0, j)];
    }
    theta[4 * h] = p.b2;
    theta
}

fn unpack(p: &mut MLPParams, theta: &DVector<f64>) {
    let h = p.hidden;
    for j in 0..h {
        p.w1[(j, 0)] = theta[2 * j];
        p.w1[(j, 1)] = theta[2 * j + 1];
        p.b1[j] = theta[2 * h + j];
        p.w2[(0, j)] = theta[3 * h + j];
    }
    p.b2 = theta[4 * h];
}

/// Residual vector and Jacobian over the (normalized) training set.
fn residuals_and_jacobian(
    p: &MLPParams,
    inputs: &[[f64; 2]],
    targets: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let h = p.hidden;
    let n = inputs.len();
    let mut r = DVector::zeros(n);
    let mut j = DMatrix::zeros(n, 4 * h + 1);
    for (i, (u, t)) in inputs.iter().zip(targets).enumerate() {
        let (out, a) = p.forward_normalized(*u);
        r[i] = out - t;
        for k in 0..h {
            let gate = p.w2[(0, k)] * (1.0 - a[k] * a[k]);
            j[(i, 2 * k)] = gate * u[0];
            j[(i, 2 * k + 1)] = gate * u[1];
            j[(i, 2 * h + k)] = gate;
            j[(i, 3 * h + k)] = a[k];
        }
        j[(i, 4 * h)] = 1.0;
    }
    (r, j)
}

const LAMBDA_CEILING: f64 = 1e10;

/// Train a [2, h, 1] network on the dataset's training split with
/// Levenberg-Marquardt.
///
/// λ shrinks ×0.1 on accepted steps and grows ×10 on rejected ones; an
/// epoch ends when a step is accepted or λ passes 1e10 without one (stop:
/// converged). Early stopping triggers after 6 consecutive validation-MSE
/// rises, and the returned parameters are the best-validation snapshot.
pub fn lm_train(
    dataset: &Dataset,
    hidden: usize,
    max_epochs: usize,
    lambda0: f64,
    seed: u64,
) -> Result<(MLPParams, Vec<EpochStats>), MLPError> {
    let train = dataset.subset(Split::Train);
    if train.is_empty() || hidden < 1 {
        return Err(MLPError::EmptyTrainSplit);
    }
    let val = dataset.subset(Split::Validation);
    let mut params = init_params(&train, hidden, seed);
    let run = descend(&mut params, &train, &val, max_epochs, lambda0)?;
    let final_params = match run.best_val {
        Some((_, best)) => best,
        None => params,
    };
    Ok((final_params, run.history))
}

/// Fresh weights with normalization maps fitted to the training split;
/// zero-spread features fall back to unit scale so the maps stay invertible.
fn init_params(train: &[&Sample], hidden: usize, seed: u64) -> MLPParams {
    let half_center = |values: &mut dyn Iterator<Item = f64>| {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        let center = 0.5 * (min + max);
        let half = 0.5 * (max - min);
        (center, if half < 1e-12 { 1.0 } else { half })
    };
    let (cv, hv) = half_center(&mut train.iter().map(|s| s.v));
    let (cp, hp) = half_center(&mut train.iter().map(|s| s.phi));
    let (co, ho) = half_center(&mut train.iter().map(|s| s.beta_d));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MLPParams {
        hidden,
        w1: DMatrix::from_fn(hidden, 2, |_, _| 0.0),
        b1: DVector::zeros(hidden),
        w2: DMatrix::zeros(1, hidden),
        b2: 0.0,
        in_center: [cv, cp],
        in_half: [hv, hp],
        out_center: co,
        out_half: ho,
        seed,
    };
    if hidden >= 4 {
        // Nguyen-Widrow layout: each hidden row gets a random direction
        // with magnitude 0.7·h^(1/2) and a staggered bias, so the tanh
        // transition bands tile the normalized input box instead of piling
        // up at the origin where the units start indistinguishable.
        let scale = 0.7 * (hidden as f64).sqrt();
        for j in 0..hidden {
            let (mut a, mut b) = (0.0f64, 0.0f64);
            while a * a + b * b < 1e-12 {
                a = rng.gen_range(-1.0..1.0);
                b = rng.gen_range(-1.0..1.0);
            }
            let norm = (a * a + b * b).sqrt();
            params.w1[(j, 0)] = scale * a / norm;
            params.w1[(j, 1)] = scale * b / norm;
            params.b1[j] =
                scale * (2.0 * j as f64 / (hidden as f64 - 1.0) - 1.0) * (a / norm).signum();
            params.w2[(0, j)] = rng.gen_range(-0.5..0.5);
        }
    } else {
        // One or two units have nothing to tile; small uniform weights keep
        // them in the responsive center of tanh, which converges faster on
        // the near-linear fits such narrow nets are used for.
        for j in 0..hidden {
            let mut init = |fan_in: f64| {
                let bound = 1.0 / fan_in.sqrt();
                rng.gen_range(-bound..bound)
            };
            params.w1[(j, 0)] = init(2.0);
            params.w1[(j, 1)] = init(2.0);
            params.b1[j] = init(2.0);
            params.w2[(0, j)] = init(hidden as f64);
        }
    }
    params
}

/// Outcome of one damped-descent run.
struct Descent {
    history: Vec<EpochStats>,
    /// Lowest validation MSE seen and the parameters that produced it.
    best_val: Option<(f64, MLPParams)>,
    /// The run ended because no damping level yielded a descent step.
    exhausted: bool,
    /// Damping level when the run ended, for seamless resumption.
    final_lambda: f64,
}

/// Core Levenberg-Marquardt loop from the current parameters. Leaves
/// `params` at the last accepted state (not the best-validation snapshot,
/// which is reported separately) so callers may resume the run.
fn descend(
    params: &mut MLPParams,
    train: &[&Sample],
    val: &[&Sample],
    max_epochs: usize,
    lambda0: f64,
) -> Result<Descent, MLPError> {
    let inputs: Vec<[f64; 2]> = train
        .iter()
        .map(|s| params.normalize_input(s.v, s.phi))
        .collect();
    let targets: Vec<f64> = train
        .iter()
        .map(|s| (s.beta_d - params.out_center) / params.out_half)
        .collect();

    let mut lambda = lambda0;
    let mut history = Vec::new();
    let mut best_val: Option<(f64, MLPParams)> = None;
    let mut rises = 0usize;
    let mut prev_val = f64::INFINITY;
    let mut exhausted = false;

    for _ in 0..max_epochs {
        let (r, jac) = residuals_and_jacobian(params, &inputs, &targets);
        let sse = r.norm_squared();
        let mut accepted = false;
        loop {
            match damped_step(&jac, &r, lambda) {
                Some(delta) => {
                    let mut candidate = params.clone();
                    let theta = pack(params) + delta;
                    unpack(&mut candidate, &theta);
                    let (r_new, _) = residuals_and_jacobian(&candidate, &inputs, &targets);
                    if r_new.norm_squared() < sse {
                        *params = candidate;
                        lambda = (lambda * 0.1).max(1e-12);
                        accepted = true;
                        break;
                    }
                    lambda *= 10.0;
                    if lambda > LAMBDA_CEILING {
                        break; // no descent left: converged
                    }
                }
                None => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_CEILING {
                        return Err(MLPError::JacobianSingular);
                    }
                }
            }
        }

        let train_mse = mse(params, train);
        let val_mse = if val.is_empty() {
            None
        } else {
            Some(mse(params, val))
        };
        history.push(EpochStats {
            train_mse,
            val_mse,
            lambda,
        });

        if let Some(vm) = val_mse {
            if best_val.as_ref().map_or(true, |(b, _)| vm < *b) {
                best_val = Some((vm, params.clone()));
            }
            rises = if vm > prev_val { rises + 1 } else { 0 };
            prev_val = vm;
            if rises >= 6 {
                break;
            }
        }
        if !accepted {
            exhausted = true;
            break;
        }
    }

    Ok(Descent {
        history,
        best_val,
        exhausted,
        final_lambda: lambda,
    })
}

/// Lean angle that balances a steady turn at speed `v` and roll `phi`:
/// bisection on m_p·g·l·sin β − F_fy·r over (−π/2, π/2).
pub fn steady_state_beta(params: &RobotParams, v: f64, phi: f64) -> Result<f64, MLPError> {
    let moment = centripetal_friction(params, v, phi) * params.r;
    let g = |beta: f64| params.m_p * params.g * params.l * beta.sin() - moment;
    let mut lo = -std::f64::consts::FRAC_PI_2 + 1e-9;
    let mut hi = std::f64::consts::FRAC_PI_2 - 1e-9;
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return Err(MLPError::NoSteadyState { v, phi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Symmetric (v, φ) grid: `n_v` speeds spanning ±1 m/s and `n_phi` roll
/// angles as ± magnitudes from 0.05 to 0.25 rad (plus 0 when n_phi is odd).
pub fn beta_grid(n_v: usize, n_phi: usize) -> (Vec<f64>, Vec<f64>) {
    let v: Vec<f64> = (0..n_v)
        .map(|i| {
            if n_v == 1 {
                0.0
            } else {
                -1.0 + 2.0 * i as f64 / (n_v - 1) as f64
            }
        })
        .collect();
    let mut phi = Vec::with_capacity(n_phi);
    let half = n_phi / 2;
    for i in 0..half {
        let mag = if half == 1 {
            0.25
        } else {
            0.05 + 0.2 * i as f64 / (half - 1) as f64
        };
        phi.push(-mag);
        phi.push(mag);
    }
    if n_phi % 2 == 1 {
        phi.push(0.0);
    }
    phi.sort_by(f64::total_cmp);
    (v, phi)
}

/// Generate steady-turn data over the grid, split 70/15/15, and train the
/// reference network.
pub fn train_beta_model(
    params: &RobotParams,
    v_values: &[f64],
    phi_values: &[f64],
    hidden: usize,
    seed: u64,
) -> Result<(MLPParams, Dataset), MLPError> {
    let mut samples = Vec::with_capacity(v_values.len() * phi_values.len());
    for &v in v_values {
        for &phi in phi_values {
            samples.push(Sample {
                v,
                phi,
                beta_d: steady_state_beta(params, v, phi)?,
            });
        }
    }
    let dataset = split_dataset(samples, (0.70, 0.15, 0.15), seed)?;
    let train = dataset.subset(Split::Train);
    if train.is_empty() || hidden < 1 {
        return Err(MLPError::EmptyTrainSplit);
    }
    let val = dataset.subset(Split::Validation);
    if val.is_empty() {
        // No validation signal to select on; a single long run's final
        // state is the best available answer.
        let (mlp, _) = lm_train(&dataset, hidden, 3000, 1e-3, seed.wrapping_add(1))?;
        return Ok((mlp, dataset));
    }

    // The patience-6 validation stop is calibrated for noisy data and
    // interrupts long valley traversals on this noise-free surface, so
    // descent segments are chained: each resumes from wherever the previous
    // one was cut off (damping level included), and a chain that bottoms
    // out or goes stale (three segments without halving the best validation
    // MSE) restarts from fresh weights. The best validation snapshot seen
    // anywhere wins.
    const SEGMENTS: usize = 240;
    const VAL_TARGET: f64 = 1e-8;
    let mut best: Option<(f64, MLPParams)> = None;
    let mut next_seed = seed.wrapping_add(1);
    let mut working = init_params(&train, hidden, next_seed);
    let mut stale = 0usize;
    let mut lambda = 1e-3;
    for _ in 0..SEGMENTS {
        let run = descend(&mut working, &train, &val, 300, lambda)?;
        lambda = run.final_lambda.clamp(1e-12, 1e-3);
        let mut improved = false;
        if let Some((vm, p)) = run.best_val {
            if best.as_ref().map_or(true, |(b, _)| vm < 0.5 * *b) {
                improved = true;
            }
            if best.as_ref().map_or(true, |(b, _)| vm < *b) {
                best = Some((vm, p));
            }
        }
        if best.as_ref().is_some_and(|(vm, _)| *vm < VAL_TARGET) {
            break;
        }
        stale = if improved { 0 } else { stale + 1 };
        if run.exhausted || stale >= 3 {
            next_seed = next_seed.wrapping_add(1);
            working = init_params(&train, hidden, next_seed);
            stale = 0;
            lambda = 1e-3;
        }
    }
    let mlp = match best {
        // Every segment records a validation snapshot, so this arm always
        // runs; the fallback keeps the degenerate path well-defined.
        Some((_, p)) => p,
        None => lm_train(&dataset, hidden, 3000, 1e-3, seed.wrapping_add(1))?.0,
    };
    Ok((mlp, dataset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn identity_norm(hidden: usize) -> MLPParams {
        MLPParams {
            hidden,
            w1: DMatrix::zeros(hidden, 2),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(1, hidden),
            b2: 0.0,
            in_center: [0.0, 0.0],
            in_half: [1.0, 1.0],
            out_center: 0.0,
            out_half: 1.0,
            seed: 0,
        }
    }

    fn line_dataset() -> Dataset {
        let samples: Vec<Sample> = (0..10)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / 9.0;
                Sample {
                    v: x,
                    phi: 0.0,
                    beta_d: 2.0 * x,
                }
            })
            .collect();
        split_dataset(samples, (1.0, 0.0, 0.0), 1).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero_everywhere() {
        let p = identity_norm(3);
        assert_eq!(p.forward(0.7, -2.0), 0.0);
        assert_eq!(p.forward(-15.0, 4.0), 0.0);
    }

    #[test]
    fn single_unit_hand_evaluation() {
        let mut p = identity_norm(1);
        p.w1[(0, 0)] = 1.0;
        p.w2[(0, 0)] = 2.0;
        assert_relative_eq!(p.forward(0.5, 123.0), 2.0 * 0.5f64.tanh(), epsilon = 1e-15);
        assert_relative_eq!(p.forward(0.5, -7.0), 0.9242343145, epsilon = 1e-9);
    }

    #[test]
    fn ninety_samples_split_sixty_three_thirteen_fourteen() {
        let samples: Vec<Sample> = (0..90)
            .map(|i| Sample {
                v: i as f64,
                phi: 0.0,
                beta_d: 0.0,
            })
            .collect();
        let ds = split_dataset(samples, (0.70, 0.15, 0.15), 7).unwrap();
        assert_eq!(ds.counts(), (63, 13, 14));
    }

    #[test]
    fn degenerate_fraction_puts_everything_in_train() {
        let ds = line_dataset();
        assert_eq!(ds.counts(), (10, 0, 0));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let samples: Vec<Sample> = (0..50)
            .map(|i| Sample {
                v: i as f64,
                phi: 0.0,
                beta_d: 0.0,
            })
            .collect();
        let a = split_dataset(samples.clone(), (0.70, 0.15, 0.15), 42).unwrap();
        let b = split_dataset(samples.clone(), (0.70, 0.15, 0.15), 42).unwrap();
        assert_eq!(a.assignment, b.assignment);
        let c = split_dataset(samples, (0.70, 0.15, 0.15), 43).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let err = split_dataset(vec![], (0.5, 0.3, 0.1), 0).unwrap_err();
        assert!(matches!(err, MLPError::BadFractions { .. }));
    }

    #[test]
    fn fits_a_line_to_machine_precision() {
        let ds = line_dataset();
        let (p, history) = lm_train(&ds, 2, 200, 1e-5, 2).unwrap();
        let train_mse = history.last().unwrap().train_mse;
        assert!(train_mse < 1e-10, "train MSE {train_mse}");
        assert!((p.forward(0.35, 0.0) - 0.7).abs() < 1e-4);
    }

    #[test]
    fn constant_targets_converge_to_zero_error() {
        let samples: Vec<Sample> = (0..8)
            .map(|i| Sample {
                v: i as f64 / 7.0,
                phi: 0.1 * i as f64,
                beta_d: 3.7,
            })
            .collect();
        let ds = split_dataset(samples, (1.0, 0.0, 0.0), 5).unwrap();
        let (p, history) = lm_train(&ds, 2, 100, 1e-3, 5).unwrap();
        assert!(history.last().unwrap().train_mse < 1e-12);
        assert_relative_eq!(p.forward(0.5, 0.35), 3.7, epsilon = 1e-6);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let ds = line_dataset();
        let (pa, ha) = lm_train(&ds, 3, 50, 1e-3, 9).unwrap();
        let (pb, hb) = lm_train(&ds, 3, 50, 1e-3, 9).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ha, hb);
    }

    #[test]
    fn huge_damping_steps_along_the_negative_gradient() {
        let ds = line_dataset();
        let (p, _) = lm_train(&ds, 3, 3, 1e-3, 11).unwrap();
        let inputs: Vec<[f64; 2]> = ds
            .samples
            .iter()
            .map(|s| p.normalize_input(s.v, s.phi))
            .collect();
        let targets: Vec<f64> = ds
            .samples
            .iter()
            .map(|s| (s.beta_d - p.out_center) / p.out_half)
            .collect();
        let (r, j) = residuals_and_jacobian(&p, &inputs, &targets);
        let delta = damped_step(&j, &r, 1e8).unwrap();
        let neg_grad = -(j.transpose() * &r);
        let cos = delta.dot(&neg_grad) / (delta.norm() * neg_grad.norm());
        assert!(cos > (1.0f64).to_radians().cos(), "cos angle {cos}");
    }

    #[test]
    fn early_stopping_returns_the_best_validation_snapshot() {
        let mut samples: Vec<Sample> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in 0..40 {
            let x = -1.0 + 2.0 * i as f64 / 39.0;
            samples.push(Sample {
                v: x,
                phi: 0.3 * x,
                beta_d: x.sin() + 0.05 * rng.gen_range(-1.0..1.0),
            });
        }
        let ds = split_dataset(samples, (0.6, 0.4, 0.0), 13).unwrap();
        let (p, history) = lm_train(&ds, 6, 150, 1e-3, 13).unwrap();
        let returned = mse(&p, &ds.subset(Split::Validation));
        let best = history
            .iter()
            .filter_map(|e| e.val_mse)
            .fold(f64::INFINITY, f64::min);
        assert!(returned <= best + 1e-15, "returned {returned} vs best {best}");
    }

    #[test]
    fn bisection_agrees_with_the_closed_form_root() {
        let rp = RobotParams::default();
        let (vs, phis) = beta_grid(9, 10);
        for &v in &vs {
            for &phi in &phis {
                let got = steady_state_beta(&rp, v, phi).unwrap();
                let closed = (rp.total_mass() * v * v * phi.tan()
                    / (rp.m_p * rp.g * rp.l))
                    .asin();
                assert!(
                    (got - closed).abs() < 1e-12,
                    "v {v} phi {phi}: {got} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn zero_speed_balances_at_zero_lean() {
        let rp = RobotParams::default();
        for phi in [-0.25, -0.1, 0.0, 0.2] {
            assert_eq!(steady_state_beta(&rp, 0.0, phi).unwrap(), 0.0);
        }
    }

    #[test]
    fn unholdable_turn_is_rejected() {
        let rp = RobotParams::default();
        let err = steady_state_beta(&rp, 3.0, 0.25).unwrap_err();
        assert!(matches!(err, MLPError::NoSteadyState { .. }));
    }

    #[test]
    fn generated_data_is_odd_symmetric() {
        let rp = RobotParams::default();
        let (vs, phis) = beta_grid(9, 10);
        for &v in &vs {
            for &phi in &phis {
                let a = steady_state_beta(&rp, v, phi).unwrap();
                let b = steady_state_beta(&rp, -v, -phi).unwrap();
                assert!((a + b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_model_reaches_small_test_error() {
        let rp = RobotParams::default();
        let (vs, phis) = beta_grid(9, 10);
        let (p, ds) = train_beta_model(&rp, &vs, &phis, 14, 7).unwrap();
        assert_eq!(ds.samples.len(), 90);
        assert_eq!(ds.counts(), (63, 13, 14));
        let test_mse = mse(&p, &ds.subset(Split::Test));
        assert!(test_mse < 1e-6, "test MSE {test_mse}");
        // Trained on odd-symmetric data, the network inherits the symmetry
        // to within its fit error.
        for &(v, phi) in &[(0.5, 0.15), (1.0, 0.25), (0.75, -0.1)] {
            let fwd = p.forward(v, phi);
            let mirrored = p.forward(-v, -phi);
            assert!((fwd + mirrored).abs() < 5e-3, "{fwd} vs {mirrored}");
        }
    }

    #[test]
    fn model_documents_round_trip_exactly() {
        let rp = RobotParams::default();
        let (vs, phis) = beta_grid(5, 4);
        let (p, _) = train_beta_model(&rp, &vs, &phis, 4, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("beta-model.json");
        p.save(&path).unwrap();
        let loaded = MLPParams::load(&path).unwrap();
        assert_eq!(p, loaded);
        assert_eq!(p.forward(0.3, 0.12), loaded.forward(0.3, 0.12));
    }

    proptest! {
        #[test]
        fn forward_is_bounded_by_the_weight_norms(
            v in -5.0f64..5.0,
            phi in -1.5f64..1.5,
            w in proptest::collection::vec(-3.0f64..3.0, 13),
        ) {
            let mut p = identity_norm(3);
            for j in 0..3 {
                p.w1[(j, 0)] = w[2 * j];
                p.w1[(j, 1)] = w[2 * j + 1];
                p.b1[j] = w[6 + j];
                p.w2[(0, j)] = w[9 + j];
            }
            p.b2 = w[12];
            p.out_half = 0.5;
            p.out_center = 0.1;
            let bound = p.out_half.abs()
                * (p.w2.iter().map(|x| x.abs()).sum::<f64>() + p.b2.abs())
                + p.out_center.abs();
            prop_assert!(p.forward(v, phi).abs() <= bound + 1e-12);
        }
    }
}
