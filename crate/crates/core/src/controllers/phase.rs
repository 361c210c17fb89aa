//! Three-phase weight scheduling for the orientation loop: a fast-response
//! phase that leans on the angle weights, an overshoot-reduction phase that
//! raises the rate weights as the target nears, and a stabilization phase
//! once the response has settled inside a band for long enough.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

/// Where the current step response stands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponsePhase {
    FastResponse,
    ReduceOvershoot,
    Stabilization,
}

impl ResponsePhase {
    /// Stable label used in exports.
    pub fn label(&self) -> &'static str {
        match self {
            ResponsePhase::FastResponse => "fast_response",
            ResponsePhase::ReduceOvershoot => "reduce_overshoot",
            ResponsePhase::Stabilization => "stabilization",
        }
    }
}

/// One phase's cost weights: diagonal state weight, input weight, and
/// diagonal terminal weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageWeights {
    pub q_diag: Vector4<f64>,
    pub r: f64,
    pub p_diag: Vector4<f64>,
}

impl StageWeights {
    /// Diagonal state/terminal weights are admissible iff nonnegative; the
    /// input weight must be strictly positive.
    pub fn validate(&self) -> bool {
        self.r > 0.0
            && self.q_diag.iter().all(|w| *w >= 0.0)
            && self.p_diag.iter().all(|w| *w >= 0.0)
    }
}

/// The full schedule: weights for each phase plus the transition thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseWeights {
    pub fast: StageWeights,
    pub reduce: StageWeights,
    pub stabilize: StageWeights,
    /// Fast response ends once the remaining error drops below this fraction
    /// of the episode's initial error.
    pub fraction_remaining: f64,
    /// Error band (rad) that counts as settled, and the retarget threshold.
    pub band: f64,
    /// Rate band (rad/s) that counts as settled.
    pub rate_band: f64,
    /// Time (s) the settled condition must hold continuously.
    pub hold_time: f64,
}

impl PhaseWeights {
    pub fn stage(&self, phase: ResponsePhase) -> &StageWeights {
        match phase {
            ResponsePhase::FastResponse => &self.fast,
            ResponsePhase::ReduceOvershoot => &self.reduce,
            ResponsePhase::Stabilization => &self.stabilize,
        }
    }

    pub fn validate(&self) -> bool {
        self.fast.validate()
            && self.reduce.validate()
            && self.stabilize.validate()
            && self.fraction_remaining > 0.0
            && self.fraction_remaining < 1.0
            && self.band > 0.0
            && self.rate_band > 0.0
            && self.hold_time >= 0.0
    }
}

impl Default for PhaseWeights {
    /// Schedule tuned for the roll loop: the state is [lean, lean rate,
    /// roll, roll rate]. The fast stage pushes the pendulum lean hard with
    /// cheap control to build roll authority quickly, hands off almost
    /// immediately (4% of the initial error covered), and the later stages
    /// raise rate weights and control cost to damp the approach. Held
    /// fixed, the fast stage rings badly; the handoff is what tames it.
    fn default() -> Self {
        PhaseWeights {
            fast: StageWeights {
                q_diag: Vector4::new(40.0, 0.0, 20.0, 0.0),
                r: 0.005,
                p_diag: Vector4::new(40.0, 0.0, 20.0, 0.0),
            },
            reduce: StageWeights {
                q_diag: Vector4::new(2.0, 4.0, 60.0, 16.0),
                r: 0.08,
                p_diag: Vector4::new(2.0, 4.0, 60.0, 16.0),
            },
            stabilize: StageWeights {
                q_diag: Vector4::new(3.0, 1.0, 40.0, 6.0),
                r: 0.15,
                p_diag: Vector4::new(3.0, 1.0, 40.0, 6.0),
            },
            fraction_remaining: 0.96,
            band: 0.02,
            rate_band: 0.05,
            hold_time: 0.3,
        }
    }
}

/// Tracks one step-response episode and advances the phase monotonically:
/// FastResponse → ReduceOvershoot → Stabilization. A target change larger
/// than the settled band starts a fresh episode.
#[derive(Debug, Clone)]
pub struct PhaseTracker {
    phase: ResponsePhase,
    target: f64,
    initial_error: f64,
    hold_elapsed: f64,
}

impl PhaseTracker {
    /// Start an episode toward `target` from the current angle.
    pub fn new(angle: f64, target: f64) -> Self {
        PhaseTracker {
            phase: ResponsePhase::FastResponse,
            target,
            initial_error: (angle - target).abs(),
            hold_elapsed: 0.0,
        }
    }

    pub fn phase(&self) -> ResponsePhase {
        self.phase
    }

    /// Advance by one control period with the current angle, rate, and
    /// target, and return the phase whose weights apply to this cycle.
    pub fn advance(
        &mut self,
        weights: &PhaseWeights,
        angle: f64,
        rate: f64,
        target: f64,
        dt: f64,
    ) -> ResponsePhase {
        if (target - self.target).abs() > weights.band {
            *self = PhaseTracker::new(angle, target);
        }
        let error = (angle - self.target).abs();
        if self.phase == ResponsePhase::FastResponse
            && error <= weights.fraction_remaining * self.initial_error
        {
            self.phase = ResponsePhase::ReduceOvershoot;
            self.hold_elapsed = 0.0;
        }
        if self.phase == ResponsePhase::ReduceOvershoot {
            if error < weights.band && rate.abs() < weights.rate_band {
                self.hold_elapsed += dt;
                if self.hold_elapsed >= weights.hold_time {
                    self.phase = ResponsePhase::Stabilization;
                }
            } else {
                self.hold_elapsed = 0.0;
            }
        }
        self.phase
    }
}
