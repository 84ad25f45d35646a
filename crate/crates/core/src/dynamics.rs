//! Planar vehicle motion: earth-fixed pose, body-frame velocity and a
//! simplified diagonal inertia/damping model integrated with explicit Euler.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// One knot in metres per second (1 knot = 1.852 km/h).
pub const KNOT: f64 = 1852.0 / 3600.0;

/// Wraps an angle into (−π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Pursuer,
    Evader,
}

/// Earth-fixed pose of one vehicle. Depth is carried but never integrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub heading: f64,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, depth: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            depth,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Body-frame velocity (surge, sway, heave). Heave stays zero on the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub surge: f64,
    pub sway: f64,
    pub heave: f64,
}

impl BodyVelocity {
    pub fn new(surge: f64, sway: f64, heave: f64) -> Self {
        Self { surge, sway, heave }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.surge, self.sway, self.heave)
    }

    fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    /// Earth-frame planar velocity for the given heading.
    pub fn world_planar(&self, heading: f64) -> Vector2<f64> {
        let (s, c) = heading.sin_cos();
        Vector2::new(c * self.surge - s * self.sway, s * self.surge + c * self.sway)
    }
}

/// Control input of one vehicle: body accelerations plus a heading setpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub surge_accel: f64,
    pub sway_accel: f64,
    pub heave_accel: f64,
    pub commanded_heading: f64,
}

impl ControlInput {
    /// Validates a control against the role's acceleration cap and heading
    /// range. Pursuer headings outside [−π/2, π/2] are rejected; evader
    /// headings are wrapped into (−π, π].
    pub fn new(
        surge_accel: f64,
        sway_accel: f64,
        commanded_heading: f64,
        role: Role,
        accel_cap: f64,
    ) -> Result<Self> {
        if !(surge_accel.is_finite() && sway_accel.is_finite() && commanded_heading.is_finite()) {
            return Err(domain("control components must be finite"));
        }
        let mag = surge_accel.hypot(sway_accel);
        if mag > accel_cap * (1.0 + 1e-9) + 1e-15 {
            return Err(domain(format!(
                "acceleration {mag} exceeds {role:?} cap {accel_cap}"
            )));
        }
        let heading = match role {
            Role::Pursuer => {
                if commanded_heading.abs() > FRAC_PI_2 + 1e-12 {
                    return Err(domain(format!(
                        "pursuer heading {commanded_heading} outside [-pi/2, pi/2]"
                    )));
                }
                commanded_heading.clamp(-FRAC_PI_2, FRAC_PI_2)
            }
            Role::Evader => normalize_angle(commanded_heading),
        };
        Ok(Self {
            surge_accel,
            sway_accel,
            heave_accel: 0.0,
            commanded_heading: heading,
        })
    }

    fn accel(&self) -> Vector3<f64> {
        Vector3::new(self.surge_accel, self.sway_accel, self.heave_accel)
    }
}

/// Simplified hydrodynamic model: diagonal inertia, linear diagonal damping,
/// optional rigid-body Coriolis term and constant restoring force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub inertia_diag: [f64; 3],
    pub damping_diag: [f64; 3],
    pub coriolis_mode: bool,
    pub restoring: [f64; 3],
    /// Speed cap of the role this parameter set belongs to (m/s).
    pub max_speed: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if self.inertia_diag.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config(format!(
                "inertia entries must be strictly positive, got {:?}",
                self.inertia_diag
            )));
        }
        if self.damping_diag.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::Config(format!(
                "damping entries must be non-negative, got {:?}",
                self.damping_diag
            )));
        }
        if !(self.max_speed > 0.0) {
            return Err(Error::Config(format!("max speed must be positive, got {}", self.max_speed)));
        }
        Ok(())
    }
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            inertia_diag: [1.0; 3],
            damping_diag: [0.001; 3],
            coriolis_mode: false,
            restoring: [0.0; 3],
            max_speed: 5.0 * KNOT,
        }
    }
}

/// Environmental acceleration perturbation in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Disturbance {
    pub force: Vector3<f64>,
    pub bound: f64,
}

impl Disturbance {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(force: Vector3<f64>, bound: f64) -> Result<Self> {
        if force.norm() > bound * (1.0 + 1e-12) {
            return Err(domain(format!(
                "disturbance magnitude {} exceeds bound {bound}",
                force.norm()
            )));
        }
        Ok(Self { force, bound })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedLimits {
    pub pursuer: f64,
    pub evader: f64,
}

/// Rotation J(η) from body to earth frame for a yaw angle.
pub fn rotation_matrix(heading: f64) -> Result<Matrix3<f64>> {
    if !heading.is_finite() {
        return Err(domain("heading must be finite"));
    }
    let (s, c) = heading.sin_cos();
    Ok(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Advances a pose by J(η)·ν·dt. Depth is left untouched.
pub fn step_kinematics(pose: AgentPose, vel: BodyVelocity, dt: f64) -> Result<AgentPose> {
    if !(dt > 0.0) {
        return Err(domain(format!("dt must be positive, got {dt}")));
    }
    let j = rotation_matrix(pose.heading)?;
    let eta_dot = j * vel.as_vector();
    Ok(AgentPose {
        x: pose.x + eta_dot.x * dt,
        y: pose.y + eta_dot.y * dt,
        depth: pose.depth,
        heading: normalize_angle(pose.heading + eta_dot.z * dt),
    })
}

/// One explicit Euler step of the body-velocity dynamics followed by the
/// speed clamp. `yaw_rate` feeds the Coriolis term when it is enabled.
///
/// Control accelerations are applied directly (thrust = M·a), so the
/// inertia only scales damping, Coriolis and restoring terms.
pub fn step_dynamics(
    vel: BodyVelocity,
    ctrl: &ControlInput,
    dist: &Disturbance,
    params: &VehicleParams,
    yaw_rate: f64,
    dt: f64,
) -> Result<BodyVelocity> {
    if !(dt > 0.0) {
        return Err(domain(format!("dt must be positive, got {dt}")));
    }
    params.validate()?;
    let nu = vel.as_vector();
    let m = Vector3::from(params.inertia_diag);
    let damping = Vector3::from(params.damping_diag).component_mul(&nu);
    let coriolis = if params.coriolis_mode {
        Vector3::new(-m.y * nu.y * yaw_rate, m.x * nu.x * yaw_rate, 0.0)
    } else {
        Vector3::zeros()
    };
    let passive = (damping + coriolis + Vector3::from(params.restoring)).component_div(&m);
    let mut next = nu + (ctrl.accel() + dist.force - passive) * dt;
    next.z = 0.0;
    Ok(clamp_speed(BodyVelocity::from_vector(next), params.max_speed))
}

fn clamp_speed(vel: BodyVelocity, cap: f64) -> BodyVelocity {
    let n = vel.norm();
    if n > cap {
        let k = cap / n;
        BodyVelocity::new(vel.surge * k, vel.sway * k, vel.heave * k)
    } else {
        vel
    }
}

/// Rescales a velocity onto the role's speed cap when it exceeds it.
pub fn clamp_limits(vel: BodyVelocity, role: Role, limits: SpeedLimits) -> BodyVelocity {
    let cap = match role {
        Role::Pursuer => limits.pursuer,
        Role::Evader => limits.evader,
    };
    clamp_speed(vel, cap)
}

/// Bounded planar disturbance: uniform direction, magnitude uniform in [0, bound].
pub fn sample_disturbance<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> Result<Disturbance> {
    if !(bound >= 0.0) {
        return Err(domain(format!("disturbance bound must be non-negative, got {bound}")));
    }
    if bound == 0.0 {
        return Ok(Disturbance::zero());
    }
    let angle = rng.gen_range(0.0..2.0 * PI);
    let magnitude = rng.gen_range(0.0..=bound);
    let (s, c) = f64::sin_cos(angle);
    Ok(Disturbance {
        force: Vector3::new(magnitude * c, magnitude * s, 0.0),
        bound,
    })
}
