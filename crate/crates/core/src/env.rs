//! Slot-stepped world: M pursuers and one evader integrated through the
//! vehicle model, plus the helpers that turn planar velocity commands into
//! admissible control inputs.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    normalize_angle, sample_disturbance, step_dynamics, step_kinematics, AgentPose, BodyVelocity, ControlInput,
    Disturbance, Role, VehicleParams,
};
use crate::error::{domain, Result};
use crate::game::{Controls, GameState, TerminationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub pose: AgentPose,
    pub vel: BodyVelocity,
    pub role: Role,
}

impl Vehicle {
    pub fn new(pose: AgentPose, vel: BodyVelocity, role: Role) -> Self {
        Self { pose, vel, role }
    }

    pub fn position(&self) -> Vector2<f64> {
        self.pose.position()
    }

    pub fn world_velocity(&self) -> Vector2<f64> {
        self.vel.world_planar(self.pose.heading)
    }

    pub fn speed(&self) -> f64 {
        self.vel.norm()
    }
}

/// Everything the world needs to advance one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub dt: f64,
    pub pursuer: VehicleParams,
    pub evader: VehicleParams,
    pub pursuer_accel_cap: f64,
    pub evader_accel_cap: f64,
    /// Largest |commanded heading| a pursuer may use (≤ π/2).
    pub pursuer_heading_limit: f64,
    pub disturbance_bound: f64,
    pub termination: TerminationConfig,
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(domain("slot length must be positive"));
        }
        self.pursuer.validate()?;
        self.evader.validate()?;
        self.termination.validate()?;
        if !(self.pursuer_accel_cap > 0.0 && self.evader_accel_cap > 0.0) {
            return Err(domain("acceleration caps must be positive"));
        }
        if !(self.pursuer_heading_limit > 0.0 && self.pursuer_heading_limit <= FRAC_PI_2) {
            return Err(domain("pursuer heading limit must lie in (0, pi/2]"));
        }
        if !(self.disturbance_bound >= 0.0) {
            return Err(domain("disturbance bound must be non-negative"));
        }
        Ok(())
    }

    fn params(&self, role: Role) -> &VehicleParams {
        match role {
            Role::Pursuer => &self.pursuer,
            Role::Evader => &self.evader,
        }
    }

    fn accel_cap(&self, role: Role) -> f64 {
        match role {
            Role::Pursuer => self.pursuer_accel_cap,
            Role::Evader => self.evader_accel_cap,
        }
    }
}

/// Position, heading and speed of one agent, as written to trajectory logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub params: EnvParams,
    pub pursuers: Vec<Vehicle>,
    pub target: Vehicle,
    pub origin: Vector2<f64>,
    pub slot: usize,
}

impl World {
    pub fn new(params: EnvParams, pursuers: Vec<Vehicle>, target: Vehicle, origin: Vector2<f64>) -> Result<Self> {
        params.validate()?;
        if pursuers.is_empty() {
            return Err(domain("world needs at least one pursuer"));
        }
        Ok(Self {
            params,
            pursuers,
            target,
            origin,
            slot: 0,
        })
    }

    pub fn num_pursuers(&self) -> usize {
        self.pursuers.len()
    }

    pub fn state(&self) -> GameState {
        GameState {
            pursuers: self.pursuers.iter().map(Vehicle::position).collect(),
            target: self.target.position(),
            slot: self.slot,
            elapsed: self.slot as f64 * self.params.dt,
        }
    }

    /// Speeds of the pursuers followed by the target speed.
    pub fn speeds(&self) -> Vec<f64> {
        self.pursuers.iter().chain(std::iter::once(&self.target)).map(Vehicle::speed).collect()
    }

    pub fn snapshot(&self) -> Vec<AgentSnapshot> {
        self.pursuers
            .iter()
            .chain(std::iter::once(&self.target))
            .map(|v| AgentSnapshot {
                x: v.pose.x,
                y: v.pose.y,
                heading: v.pose.heading,
                speed: v.speed(),
            })
            .collect()
    }

    /// Advances every vehicle by one slot. The commanded heading is taken
    /// up within the slot; a fresh bounded disturbance is drawn per vehicle.
    /// Returns the planar world velocities after the step, which are the
    /// controls that enter the payoffs.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        pursuer_ctrls: &[ControlInput],
        target_ctrl: &ControlInput,
        rng: &mut R,
    ) -> Result<Controls> {
        if pursuer_ctrls.len() != self.pursuers.len() {
            return Err(domain(format!(
                "{} pursuer controls for {} pursuers",
                pursuer_ctrls.len(),
                self.pursuers.len()
            )));
        }
        let params = self.params.clone();
        let mut advance = |v: &mut Vehicle, ctrl: &ControlInput| -> Result<Vector2<f64>> {
            let dist = if params.disturbance_bound > 0.0 {
                sample_disturbance(rng, params.disturbance_bound)?
            } else {
                Disturbance::zero()
            };
            let yaw_rate = normalize_angle(ctrl.commanded_heading - v.pose.heading) / params.dt;
            v.pose.heading = ctrl.commanded_heading;
            v.vel = step_dynamics(v.vel, ctrl, &dist, params.params(v.role), yaw_rate, params.dt)?;
            v.pose = step_kinematics(v.pose, v.vel, params.dt)?;
            Ok(v.world_velocity())
        };
        let mut controls = Controls::zeros(self.pursuers.len());
        for (k, (v, c)) in self.pursuers.iter_mut().zip(pursuer_ctrls).enumerate() {
            controls.pursuers[k] = advance(v, c)?;
        }
        controls.target = advance(&mut self.target, target_ctrl)?;
        self.slot += 1;
        Ok(controls)
    }
}

/// Per-slot snapshots of an episode; `rewards[k]` is earned on the step
/// from slot k to slot k + 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub snapshots: Vec<Vec<AgentSnapshot>>,
    pub rewards: Vec<f64>,
}

impl EpisodeLog {
    pub fn start(world: &World) -> Self {
        Self {
            snapshots: vec![world.snapshot()],
            rewards: Vec::new(),
        }
    }

    pub fn record(&mut self, world: &World, reward: f64) {
        self.snapshots.push(world.snapshot());
        self.rewards.push(reward);
    }

    pub fn steps(&self) -> usize {
        self.rewards.len()
    }
}

/// Turns a desired planar velocity into an admissible control.
///
/// The heading is chosen to rotate the current body velocity as close to the
/// command as the role's heading range allows; the remaining mismatch is
/// closed with body accelerations (including damping feed-forward) clipped
/// to the cap.
pub fn velocity_command(vehicle: &Vehicle, desired: Vector2<f64>, env: &EnvParams) -> Result<ControlInput> {
    let role = vehicle.role;
    let params = env.params(role);
    let cap = env.accel_cap(role);
    let mut desired = desired;
    if desired.norm() > params.max_speed {
        desired *= params.max_speed / desired.norm();
    }
    let nu = Vector2::new(vehicle.vel.surge, vehicle.vel.sway);
    let theta = if desired.norm() > 0.0 {
        desired.y.atan2(desired.x)
    } else {
        vehicle.world_velocity().y.atan2(vehicle.world_velocity().x)
    };
    let beta = if nu.norm() > 0.0 { nu.y.atan2(nu.x) } else { 0.0 };
    let unconstrained = normalize_angle(theta - beta);
    let heading = match role {
        Role::Evader => unconstrained,
        Role::Pursuer => {
            let lim = env.pursuer_heading_limit;
            if nu.norm() == 0.0 {
                // From rest the heading can point along ±desired freely.
                let folded = fold_half_plane(theta);
                folded.clamp(-lim, lim)
            } else {
                clamp_on_circle(unconstrained, lim)
            }
        }
    };
    let (s, c) = heading.sin_cos();
    let body_desired = Vector2::new(c * desired.x + s * desired.y, -s * desired.x + c * desired.y);
    let damping = Vector2::new(
        params.damping_diag[0] * nu.x / params.inertia_diag[0],
        params.damping_diag[1] * nu.y / params.inertia_diag[1],
    );
    let mut accel = (body_desired - nu) / env.dt + damping;
    if accel.norm() > cap {
        accel *= cap / accel.norm();
    }
    ControlInput::new(accel.x, accel.y, heading, role, cap)
}

/// Maps an angle onto [−π/2, π/2] by reversing direction when needed.
pub fn fold_half_plane(angle: f64) -> f64 {
    let a = normalize_angle(angle);
    if a > FRAC_PI_2 {
        a - std::f64::consts::PI
    } else if a < -FRAC_PI_2 {
        a + std::f64::consts::PI
    } else {
        a
    }
}

/// Nearest angle to `angle` (on the circle) inside [−lim, lim].
fn clamp_on_circle(angle: f64, lim: f64) -> f64 {
    if angle.abs() <= lim {
        return angle;
    }
    let to_upper = normalize_angle(angle - lim).abs();
    let to_lower = normalize_angle(angle + lim).abs();
    if to_upper <= to_lower {
        lim
    } else {
        -lim
    }
}

/// Default evader: full acceleration directly away from the pursuer
/// centroid. A degenerate (zero) flight vector resolves to heading 0.
pub fn evader_flee(world: &World) -> Result<ControlInput> {
    let m = world.num_pursuers() as f64;
    let centroid = world.pursuers.iter().map(Vehicle::position).sum::<Vector2<f64>>() / m;
    let away = world.target.position() - centroid;
    let heading = if away.norm() > 1e-12 { away.y.atan2(away.x) } else { 0.0 };
    ControlInput::new(world.params.evader_accel_cap, 0.0, heading, Role::Evader, world.params.evader_accel_cap)
}

/// Evader driven by a planar velocity command (e.g. the analytic q*).
pub fn evader_towards(world: &World, desired: Vector2<f64>) -> Result<ControlInput> {
    velocity_command(&world.target, desired, &world.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::KNOT;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn table_params() -> EnvParams {
        EnvParams {
            dt: 1.0,
            pursuer: VehicleParams {
                max_speed: 5.0 * KNOT,
                ..VehicleParams::default()
            },
            evader: VehicleParams {
                max_speed: KNOT,
                ..VehicleParams::default()
            },
            pursuer_accel_cap: 0.008 * KNOT,
            evader_accel_cap: 0.0016 * KNOT,
            pursuer_heading_limit: FRAC_PI_2,
            disturbance_bound: 0.0,
            termination: TerminationConfig {
                safety_radius: 5.0,
                sense_radius: 80.0,
                attack_radius: 15.0,
                escape_value: -1.0,
                capture_value: 10.0,
                horizon: 1000,
                strict_escape: false,
            },
        }
    }

    fn vehicle(x: f64, y: f64, heading: f64, surge: f64, role: Role) -> Vehicle {
        Vehicle::new(AgentPose::new(x, y, -200.0, heading), BodyVelocity::new(surge, 0.0, 0.0), role)
    }

    #[test]
    fn single_pursuer_due_west_sends_evader_east() {
        let world = World::new(
            table_params(),
            vec![vehicle(-10.0, 0.0, 0.0, 0.0, Role::Pursuer)],
            vehicle(0.0, 0.0, 1.0, 0.0, Role::Evader),
            Vector2::zeros(),
        )
        .unwrap();
        assert_abs_diff_eq!(evader_flee(&world).unwrap().commanded_heading, 0.0);

        let north = World::new(
            table_params(),
            vec![vehicle(0.0, -10.0, 0.0, 0.0, Role::Pursuer)],
            vehicle(0.0, 0.0, 0.0, 0.0, Role::Evader),
            Vector2::zeros(),
        )
        .unwrap();
        assert_abs_diff_eq!(evader_flee(&north).unwrap().commanded_heading, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_pursuers_resolve_to_zero_heading() {
        let world = World::new(
            table_params(),
            vec![
                vehicle(10.0, 0.0, 0.0, 0.0, Role::Pursuer),
                vehicle(-10.0, 0.0, 0.0, 0.0, Role::Pursuer),
            ],
            vehicle(0.0, 0.0, 2.0, 0.0, Role::Evader),
            Vector2::zeros(),
        )
        .unwrap();
        assert_eq!(evader_flee(&world).unwrap().commanded_heading, 0.0);
    }

    #[test]
    fn evader_saturates_at_its_speed_cap() {
        let mut world = World::new(
            table_params(),
            vec![vehicle(-10.0, 0.0, 0.0, 0.0, Role::Pursuer)],
            vehicle(0.0, 0.0, 0.0, 0.0, Role::Evader),
            Vector2::zeros(),
        )
        .unwrap();
        world.params.evader.damping_diag = [0.0; 3];
        // Raise the cap so 50 slots of full thrust overshoot V2.
        world.params.evader_accel_cap = 0.05 * KNOT;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hold = ControlInput::new(0.0, 0.0, 0.0, Role::Pursuer, 1.0).unwrap();
        for _ in 0..50 {
            let ctrl = evader_flee(&world).unwrap();
            world.step(&[hold], &ctrl, &mut rng).unwrap();
        }
        assert_abs_diff_eq!(world.target.speed(), KNOT, epsilon = 1e-12);
    }

    #[test]
    fn step_returns_post_step_world_velocities() {
        let mut world = World::new(
            table_params(),
            vec![vehicle(0.0, 0.0, 0.3, 1.0, Role::Pursuer)],
            vehicle(30.0, 0.0, 0.0, 0.5, Role::Evader),
            Vector2::zeros(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ControlInput::new(0.001, 0.0, 0.5, Role::Pursuer, 0.008 * KNOT).unwrap();
        let e = ControlInput::new(0.0, 0.0, 0.0, Role::Evader, 1.0).unwrap();
        let controls = world.step(&[p], &e, &mut rng).unwrap();
        assert_eq!(controls.pursuers[0], world.pursuers[0].world_velocity());
        assert_eq!(controls.target, world.target.world_velocity());
        assert_eq!(world.slot, 1);
        assert_eq!(world.pursuers[0].pose.heading, 0.5);
        assert_eq!(world.state().slot, 1);
    }

    #[test]
    fn velocity_command_rotates_and_respects_caps() {
        let env = table_params();
        let v = vehicle(0.0, 0.0, 0.0, 1.0, Role::Pursuer);
        // Command north: heading rotates to π/2, surge kept.
        let c = velocity_command(&v, Vector2::new(0.0, 1.0), &env).unwrap();
        assert_abs_diff_eq!(c.commanded_heading, FRAC_PI_2, epsilon = 1e-12);
        assert!(c.surge_accel.hypot(c.sway_accel) <= env.pursuer_accel_cap * (1.0 + 1e-12));

        // Command west: outside the heading range, so the clamp picks an endpoint
        // and the surge decelerates.
        let c = velocity_command(&v, Vector2::new(-2.0, 0.0), &env).unwrap();
        assert_abs_diff_eq!(c.commanded_heading.abs(), FRAC_PI_2, epsilon = 1e-12);

        // From rest, west folds to heading 0 with negative surge.
        let rest = vehicle(0.0, 0.0, 0.7, 0.0, Role::Pursuer);
        let c = velocity_command(&rest, Vector2::new(-2.0, 0.0), &env).unwrap();
        assert_eq!(c.commanded_heading, 0.0);
        assert!(c.surge_accel < 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let v = vehicle(0.0, 0.0, rng.gen_range(-1.5..1.5), rng.gen_range(-3.0..3.0), Role::Pursuer);
            let d = Vector2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let c = velocity_command(&v, d, &env).unwrap();
            assert!(c.commanded_heading.abs() <= FRAC_PI_2);
        }
    }

    #[test]
    fn disturbance_free_world_is_deterministic() {
        let mk = || {
            World::new(
                table_params(),
                vec![vehicle(0.0, 0.0, 0.0, 0.5, Role::Pursuer), vehicle(0.0, 10.0, 0.0, 0.5, Role::Pursuer)],
                vehicle(40.0, 0.0, 0.0, 0.5, Role::Evader),
                Vector2::zeros(),
            )
            .unwrap()
        };
        let run = |w: &mut World, rng: &mut ChaCha8Rng| {
            for _ in 0..100 {
                let target = w.target.position();
                let ctrls: Vec<_> = w
                    .pursuers
                    .iter()
                    .map(|p| velocity_command(p, target - p.position(), &w.params).unwrap())
                    .collect();
                let e = evader_flee(w).unwrap();
                w.step(&ctrls, &e, rng).unwrap();
            }
        };
        let (mut a, mut b) = (mk(), mk());
        run(&mut a, &mut ChaCha8Rng::seed_from_u64(1));
        run(&mut b, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
    }
}
