//! Path-following guidance: converts a world-frame circular reference into
//! the (v_d, φ_d) pair the two body-frame controllers track. The yaw
//! kinematics come from the rolling constraint ψ̇ = v·tan(φ)/r, i.e. the
//! lean angle sets the turning curvature tan(φ)/r.

use serde::{Deserialize, Serialize};

use crate::harness::scenario::TrajectorySpec;

/// Feedback gains of the guidance law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceGains {
    /// Curvature per radian of heading error (1/m/rad).
    #[serde(default = "default_k_psi")]
    pub k_psi: f64,
    /// Curvature per meter of cross-track error (1/m²).
    #[serde(default = "default_k_ct")]
    pub k_ct: f64,
    /// Roll-command clamp (rad), strictly below π/2.
    #[serde(default = "default_phi_max")]
    pub phi_max: f64,
}

fn default_k_psi() -> f64 {
    0.8
}
fn default_k_ct() -> f64 {
    0.4
}
fn default_phi_max() -> f64 {
    1.2
}

impl Default for GuidanceGains {
    fn default() -> Self {
        GuidanceGains {
            k_psi: default_k_psi(),
            k_ct: default_k_ct(),
            phi_max: default_phi_max(),
        }
    }
}

impl GuidanceGains {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k_psi >= 0.0) || !(self.k_ct >= 0.0) {
            return Err("guidance gains must be nonnegative".into());
        }
        if !(self.phi_max > 0.0 && self.phi_max < std::f64::consts::FRAC_PI_2) {
            return Err("phi_max must lie in (0, pi/2)".into());
        }
        Ok(())
    }
}

/// World-frame pose of the robot, integrated kinematically by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading (rad), world frame.
    pub psi: f64,
}

/// Sampled state of the moving reference on the circular path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub x: f64,
    pub y: f64,
    /// Path tangent direction (rad).
    pub psi: f64,
    /// Signed path curvature (1/m): positive turns left.
    pub curvature: f64,
    /// Reference ground speed (m/s).
    pub speed: f64,
}

/// The circular reference path of a trajectory scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRef {
    radius: f64,
    omega: f64,
    center: [f64; 2],
    start_angle: f64,
}

impl TrajectoryRef {
    pub fn new(spec: &TrajectorySpec) -> Self {
        TrajectoryRef {
            radius: spec.radius,
            omega: spec.omega,
            center: spec.center,
            start_angle: spec.start_angle,
        }
    }

    /// Reference point at time t: position on the circle, tangent heading,
    /// signed curvature, and ground speed.
    pub fn at(&self, t: f64) -> ReferencePoint {
        let a = self.omega * t + self.start_angle;
        let tangent_sign = self.omega.signum();
        ReferencePoint {
            x: self.center[0] + self.radius * a.cos(),
            y: self.center[1] + self.radius * a.sin(),
            psi: wrap_angle(a + tangent_sign * std::f64::consts::FRAC_PI_2),
            curvature: tangent_sign / self.radius,
            speed: self.omega.abs() * self.radius,
        }
    }

    /// Distance from a world point to the path itself (the circle), i.e.
    /// the world-frame path error.
    pub fn path_error(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        ((dx * dx + dy * dy).sqrt() - self.radius).abs()
    }
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// One guidance update: blend the reference curvature with heading and
/// cross-track corrections, then map the commanded curvature to a lean
/// angle through tan(φ) = r·κ. Returns (v_d, φ_d).
pub fn guidance_step(
    traj: &TrajectoryRef,
    gains: &GuidanceGains,
    pose: &Pose,
    t: f64,
    shell_radius: f64,
) -> (f64, f64) {
    let r = traj.at(t);
    // Cross-track error, positive when the robot sits left of the path.
    let dx = pose.x - r.x;
    let dy = pose.y - r.y;
    let e_ct = -dx * r.psi.sin() + dy * r.psi.cos();
    let e_psi = wrap_angle(r.psi - pose.psi);
    let kappa_cmd = r.curvature + gains.k_psi * e_psi - gains.k_ct * e_ct;
    let phi_d = (shell_radius * kappa_cmd)
        .atan()
        .clamp(-gains.phi_max, gains.phi_max);
    (r.speed, phi_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn circle() -> TrajectoryRef {
        TrajectoryRef::new(&TrajectorySpec {
            radius: 4.0,
            omega: 0.125,
            center: [4.0, 4.0],
            start_angle: -FRAC_PI_2,
            gains: GuidanceGains::default(),
        })
    }

    #[test]
    fn reference_circle_starts_at_the_bottom_heading_along_x() {
        let r = circle().at(0.0);
        assert_relative_eq!(r.x, 4.0, epsilon = 1e-12);
        assert_relative_eq!(r.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.psi, 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.speed, 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.curvature, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn on_path_command_is_the_kinematic_lean_for_the_circle() {
        let traj = circle();
        let pose = Pose {
            x: 4.0,
            y: 0.0,
            psi: 0.0,
        };
        let (v_d, phi_d) = guidance_step(&traj, &GuidanceGains::default(), &pose, 0.0, 0.3);
        assert_relative_eq!(v_d, 0.5, epsilon = 1e-12);
        assert_relative_eq!(phi_d, (0.3f64 / 4.0).atan(), epsilon = 1e-12);
    }

    #[test]
    fn left_of_a_straight_path_commands_a_lean_toward_it() {
        // A huge circle approximates a straight line along +x near the start.
        let traj = TrajectoryRef::new(&TrajectorySpec {
            radius: 1e9,
            omega: 0.5 / 1e9,
            center: [0.0, 1e9],
            start_angle: -FRAC_PI_2,
            gains: GuidanceGains::default(),
        });
        let aligned = Pose {
            x: 0.0,
            y: 1.0,
            psi: 0.0,
        };
        let (_, phi_d) = guidance_step(&traj, &GuidanceGains::default(), &aligned, 0.0, 0.3);
        assert!(
            phi_d < 0.0,
            "left of the path must lean right (negative), got {phi_d}"
        );

        let right = Pose {
            x: 0.0,
            y: -1.0,
            psi: 0.0,
        };
        let (_, phi_d) = guidance_step(&traj, &GuidanceGains::default(), &right, 0.0, 0.3);
        assert!(phi_d > 0.0, "right of the path must lean left, got {phi_d}");
    }

    #[test]
    fn heading_error_steers_back_toward_the_tangent() {
        let traj = circle();
        // On the path but pointed 0.3 rad right of the tangent.
        let pose = Pose {
            x: 4.0,
            y: 0.0,
            psi: -0.3,
        };
        let nominal = (0.3f64 * 0.25).atan();
        let (_, phi_d) = guidance_step(&traj, &GuidanceGains::default(), &pose, 0.0, 0.3);
        assert!(phi_d > nominal, "under-heading must add left curvature");
    }

    #[test]
    fn clockwise_circles_carry_negative_curvature() {
        let traj = TrajectoryRef::new(&TrajectorySpec {
            radius: 4.0,
            omega: -0.125,
            center: [4.0, 4.0],
            start_angle: FRAC_PI_2,
            gains: GuidanceGains::default(),
        });
        let r = traj.at(0.0);
        assert_relative_eq!(r.curvature, -0.25, epsilon = 1e-12);
        assert_relative_eq!(r.psi, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn path_error_measures_distance_to_the_circle() {
        let traj = circle();
        assert_relative_eq!(traj.path_error(4.0, 0.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(traj.path_error(4.0, -0.5), 0.5, epsilon = 1e-12);
        assert_relative_eq!(traj.path_error(4.0, 4.0), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn wrap_angle_stays_in_the_principal_branch() {
        use std::f64::consts::PI;
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.1 - 2.0 * PI), 0.1, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-0.1), -0.1, epsilon = 1e-12);
    }
}
