//! Response indicators computed from a telemetry series: rise time,
//! overshoot, settling time, steady RMSE, rate statistics, mechanical
//! energy, and current change rates. Everything is derived purely from the
//! exported rows, so parsing a CSV back yields identical numbers.

use serde::{Deserialize, Serialize};

/// One telemetry row — exactly the columns of the exported CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Time (s).
    pub t: f64,
    /// Forward velocity ẋ (m/s).
    pub v: f64,
    /// Velocity target (m/s).
    pub v_d: f64,
    /// Pendulum swing angle (rad).
    pub alpha: f64,
    /// Pendulum roll angle (rad).
    pub beta: f64,
    /// Shell pitch x/r (rad).
    pub theta: f64,
    /// Shell roll (rad).
    pub phi: f64,
    /// Roll target (rad).
    pub phi_d: f64,
    /// Swing motor torque (N·m).
    pub tau1: f64,
    /// Roll motor torque (N·m).
    pub tau2: f64,
    /// Swing motor current (A).
    pub i1: f64,
    /// Roll motor current (A).
    pub i2: f64,
    /// Active weight-schedule phase label, or "none".
    pub phase: String,
}

/// The indicator set for one tracked channel. Step indicators are absent
/// (`None`) when the response never reaches 90% of the step, or when the
/// profile is continuous — never reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Rise time: step onset to first crossing of 90% of the step (s).
    pub t_r: Option<f64>,
    /// Overshoot beyond the final target, % of the step, floored at 0.
    pub sigma: Option<f64>,
    /// Settling time: step onset to entering the band for good (s).
    pub t_s: Option<f64>,
    /// RMSE vs the target after settling (step) or over the whole
    /// tracking window (continuous / unsettled).
    pub e_rmse: f64,
    /// [min, max] of the channel rate over the full episode (rad/s).
    pub rate_range: [f64; 2],
    /// Mean absolute channel rate over the full episode (rad/s).
    pub rate_aa: f64,
    /// Σ|τᵢ·ωᵢ|·dt over both motors, ω the respective pendulum rate (J).
    pub energy_q: f64,
    /// Mean absolute current change rate per motor (A/s).
    pub i_aa: [f64; 2],
}

/// Which output the indicators track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackedChannel {
    /// v vs v_d; channel rate is the shell pitch rate θ̇ = v/r.
    Velocity,
    /// φ vs φ_d; channel rate is φ̇ (finite-differenced).
    Roll,
}

/// Whether the target is a step (step indicators apply) or a continuously
/// varying profile (only RMSE and rate/energy stats apply).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Step,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub channel: TrackedChannel,
    pub response: ResponseKind,
    /// Settling band as a fraction of the step magnitude.
    pub band_fraction: f64,
    /// Absolute lower bound on the band — keeps the band meaningful for
    /// near-zero steps.
    pub band_floor: f64,
    /// Shell radius r (m), for θ̇ = v/r.
    pub shell_radius: f64,
    /// Rows before this time are excluded from tracking analysis (rate,
    /// energy, and current stats still cover the full episode).
    pub window_start: f64,
}

impl MetricsConfig {
    pub fn velocity_step(shell_radius: f64) -> Self {
        MetricsConfig {
            channel: TrackedChannel::Velocity,
            response: ResponseKind::Step,
            band_fraction: 0.05,
            band_floor: 1e-3,
            shell_radius,
            window_start: 0.0,
        }
    }

    pub fn roll_step(shell_radius: f64) -> Self {
        MetricsConfig {
            channel: TrackedChannel::Roll,
            ..Self::velocity_step(shell_radius)
        }
    }

    pub fn continuous(channel: TrackedChannel, shell_radius: f64) -> Self {
        MetricsConfig {
            channel,
            response: ResponseKind::Continuous,
            ..Self::velocity_step(shell_radius)
        }
    }
}

fn channel_series(records: &[Record], channel: TrackedChannel) -> (Vec<f64>, Vec<f64>) {
    match channel {
        TrackedChannel::Velocity => (
            records.iter().map(|r| r.v).collect(),
            records.iter().map(|r| r.v_d).collect(),
        ),
        TrackedChannel::Roll => (
            records.iter().map(|r| r.phi).collect(),
            records.iter().map(|r| r.phi_d).collect(),
        ),
    }
}

/// Forward-difference rate of `x` against `t`, same length as the input
/// (last entry repeats the previous one).
fn finite_rate(t: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut rate = Vec::with_capacity(n);
    for k in 0..n - 1 {
        let dt = t[k + 1] - t[k];
        rate.push(if dt > 0.0 { (x[k + 1] - x[k]) / dt } else { 0.0 });
    }
    rate.push(rate[n - 2]);
    rate
}

fn mean_abs(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v.abs();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn rmse(actual: &[f64], target: &[f64]) -> f64 {
    if actual.is_empty() {
        return 0.0;
    }
    let sum: f64 = actual
        .iter()
        .zip(target)
        .map(|(a, d)| (a - d) * (a - d))
        .sum();
    (sum / actual.len() as f64).sqrt()
}

/// The rows with t0 ≤ t < t1 — handy for analyzing one step of a
/// multi-step episode in isolation.
pub fn segment(records: &[Record], t0: f64, t1: f64) -> &[Record] {
    let lo = records.partition_point(|r| r.t < t0);
    let hi = records.partition_point(|r| r.t < t1);
    &records[lo..hi]
}

/// Compute the full indicator set from a telemetry series.
pub fn compute_metrics(records: &[Record], cfg: &MetricsConfig) -> Metrics {
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let (actual, target) = channel_series(records, cfg.channel);
    let n = records.len();

    // Rate, energy, and current statistics cover the full episode.
    let rate: Vec<f64> = match cfg.channel {
        TrackedChannel::Velocity => records.iter().map(|r| r.v / cfg.shell_radius).collect(),
        TrackedChannel::Roll => finite_rate(&t, &actual),
    };
    let rate_range = rate.iter().fold([f64::INFINITY, f64::NEG_INFINITY], |r, &v| {
        [r[0].min(v), r[1].max(v)]
    });
    let rate_range = if n == 0 { [0.0, 0.0] } else { rate_range };
    let rate_aa = mean_abs(rate.iter().copied());

    let alpha: Vec<f64> = records.iter().map(|r| r.alpha).collect();
    let beta: Vec<f64> = records.iter().map(|r| r.beta).collect();
    let alpha_rate = finite_rate(&t, &alpha);
    let beta_rate = finite_rate(&t, &beta);
    let mut energy_q = 0.0;
    for k in 0..n.saturating_sub(1) {
        let dt = t[k + 1] - t[k];
        energy_q += ((records[k].tau1 * alpha_rate[k]).abs()
            + (records[k].tau2 * beta_rate[k]).abs())
            * dt;
    }
    let i_aa = [
        mean_abs((1..n).map(|k| {
            let dt = t[k] - t[k - 1];
            if dt > 0.0 {
                (records[k].i1 - records[k - 1].i1) / dt
            } else {
                0.0
            }
        })),
        mean_abs((1..n).map(|k| {
            let dt = t[k] - t[k - 1];
            if dt > 0.0 {
                (records[k].i2 - records[k - 1].i2) / dt
            } else {
                0.0
            }
        })),
    ];

    // Tracking analysis runs on the window.
    let w0 = records.partition_point(|r| r.t < cfg.window_start);
    let (mut t_r, mut sigma, mut t_s) = (None, None, None);
    let mut e_rmse = rmse(&actual[w0..], &target[w0..]);

    if cfg.response == ResponseKind::Step && n > w0 {
        // Step onset: the latest in-column target change, else the window
        // start (a constant nonzero target is a step applied at the start).
        // Earlier steps of a multi-step episode are analyzed by slicing
        // with [`segment`].
        let k0 = (w0 + 1..n)
            .rev()
            .find(|&k| target[k] != target[k - 1])
            .unwrap_or(w0);
        let y0 = actual[k0];
        let y_f = target[n - 1];
        let step = y_f - y0;
        if step.abs() > 1e-12 {
            let sign = step.signum();
            let k_r = (k0..n).find(|&k| sign * (actual[k] - y0) >= 0.9 * step.abs());
            if let Some(k_r) = k_r {
                t_r = Some(t[k_r] - t[k0]);
                let peak = (k0..n)
                    .map(|k| sign * (actual[k] - y_f))
                    .fold(f64::NEG_INFINITY, f64::max);
                sigma = Some((peak / step.abs() * 100.0).max(0.0));

                let band = (cfg.band_fraction * step.abs()).max(cfg.band_floor);
                let last_outside = (k0..n).rev().find(|&k| (actual[k] - y_f).abs() > band);
                t_s = match last_outside {
                    Some(k) if k + 1 >= n => None,
                    Some(k) => Some(t[k + 1] - t[k0]),
                    None => Some(0.0),
                };
                // A wide absolute band floor could nominally be entered
                // before the 90% crossing; settling is defined to not
                // precede the rise so the pair stays ordered.
                if let (Some(tr), Some(ts)) = (t_r, t_s) {
                    t_s = Some(ts.max(tr));
                }
                if let Some(ts) = t_s {
                    let settled = records.partition_point(|r| r.t < t[k0] + ts);
                    e_rmse = rmse(&actual[settled..], &target[settled..]);
                }
            }
        }
    }

    Metrics {
        t_r,
        sigma,
        t_s,
        e_rmse,
        rate_range,
        rate_aa,
        energy_q,
        i_aa,
    }
}
