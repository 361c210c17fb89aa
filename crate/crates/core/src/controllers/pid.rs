//! Positional PID with clamped integral and output, derivative taken on the
//! measurement so setpoint steps do not kick the output.

/// Gains and clamps for one PID loop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the stored integral term (same units as the output).
    pub integral_clamp: f64,
    /// Bound on the returned output.
    pub output_clamp: f64,
}

/// Accumulated controller memory: the integral term and the previous
/// measurement for the derivative.
#[derive(Debug, Clone, Copy, Default)]
pub struct PidState {
    pub integral: f64,
    pub last_measurement: Option<f64>,
}

/// One PID update over `dt` seconds. The derivative acts on the measurement
/// (sign flipped), the integral is clamped before use, and the output is
/// clamped last.
pub fn pid_step(
    gains: &PidGains,
    state: &mut PidState,
    setpoint: f64,
    measurement: f64,
    dt: f64,
) -> f64 {
    let error = setpoint - measurement;
    state.integral =
        (state.integral + gains.ki * error * dt).clamp(-gains.integral_clamp, gains.integral_clamp);
    let derivative = match state.last_measurement {
        Some(prev) => -(measurement - prev) / dt,
        None => 0.0,
    };
    state.last_measurement = Some(measurement);
    let raw = gains.kp * error + state.integral + gains.kd * derivative;
    raw.clamp(-gains.output_clamp, gains.output_clamp)
}

impl PidGains {
    /// Clamps must be positive for the loop to have any authority.
    pub fn validate(&self) -> bool {
        self.integral_clamp > 0.0 && self.output_clamp > 0.0
    }
}
