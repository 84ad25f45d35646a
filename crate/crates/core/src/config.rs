//! Scenario configuration (TOML), validation, seeding and initial placement.
//!
//! Every key has a default, so an empty file is a complete scenario. Speeds
//! are given in knots and accelerations in knots per second, as the
//! scenario tables quote them; everything is converted to SI internally.
//! One slot lasts `system.slot_seconds` (1 s by default), which is what
//! makes the 1000-slot cap and second-scale link delays comparable.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustics::{sound_speed, WaterColumn};
use crate::analytic::{EvaderMode, PlannerConfig, TerminalMode};
use crate::dqn::{ActionSpec, Agent, DelayMode, DelayModel, DqnHyperparams, ObsContext};
use crate::dynamics::{AgentPose, BodyVelocity, Role, VehicleParams, KNOT};
use crate::env::{fold_half_plane, EnvParams, Vehicle, World};
use crate::error::{Error, Result};
use crate::game::{PayoffWeights, TerminationConfig};
use crate::metrics::ConsistencyDivisor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Hunting centre O = (x, y, depth).
    pub start_point: [f64; 3],
    /// M
    pub num_pursuers: usize,
    /// ‖T − O‖ at the start (m).
    pub initial_distance: f64,
    /// V1 (knot)
    pub pursuer_max_speed: f64,
    /// V2 (knot)
    pub target_max_speed: f64,
    /// knot/s
    pub pursuer_acceleration: f64,
    /// knot/s
    pub target_acceleration: f64,
    /// ψ_i ∈ [−limit, limit] (rad)
    pub pursuer_heading_limit: f64,
    /// ψ_T ∈ [−limit, limit] (rad); the evader is unrestricted below π.
    pub target_heading_limit: f64,
    /// r (m)
    pub safety_radius: f64,
    /// R1 (m)
    pub sense_radius: f64,
    /// R2 (m)
    pub attack_radius: f64,
    /// knot
    pub pursuer_initial_speed: f64,
    /// knot
    pub target_initial_speed: f64,
    pub max_slots: usize,
    pub slot_seconds: f64,
    /// a: terminal reward on escape.
    pub escape_value: f64,
    /// b: terminal reward on capture.
    pub capture_value: f64,
    pub strict_escape: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            start_point: [400.0, 400.0, -200.0],
            num_pursuers: 3,
            initial_distance: 40.0,
            pursuer_max_speed: 5.0,
            target_max_speed: 1.0,
            pursuer_acceleration: 0.008,
            target_acceleration: 0.0016,
            pursuer_heading_limit: FRAC_PI_2,
            target_heading_limit: PI,
            safety_radius: 5.0,
            sense_radius: 80.0,
            attack_radius: 15.0,
            pursuer_initial_speed: 1.0,
            target_initial_speed: 1.0,
            max_slots: 1000,
            slot_seconds: 1.0,
            escape_value: -1.0,
            capture_value: 10.0,
            strict_escape: false,
        }
    }
}

/// Penalty weights of the pay-off: α (collision), β (cohesion), c (exponent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub alpha: f64,
    pub beta: f64,
    pub exponent: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            exponent: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleConfig {
    pub inertia: [f64; 3],
    pub damping: [f64; 3],
    pub coriolis: bool,
    pub restoring: [f64; 3],
}

impl Default for VehicleConfig {
    fn default() -> Self {
        let p = VehicleParams::default();
        Self {
            inertia: p.inertia_diag,
            damping: p.damping_diag,
            coriolis: p.coriolis_mode,
            restoring: p.restoring,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaterConfig {
    pub temperature: f64,
    pub salinity: f64,
    pub pressure: f64,
}

impl Default for WaterConfig {
    fn default() -> Self {
        Self {
            temperature: 10.0,
            salinity: 35.0,
            pressure: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticsConfig {
    pub mode: DelayMode,
    /// Fixed modem latency added to each link's travel time (s).
    pub link_latency: f64,
    /// Slots of history kept for delayed lookups.
    pub buffer_slots: usize,
}

impl Default for AcousticsConfig {
    fn default() -> Self {
        Self {
            mode: DelayMode::Acoustic,
            link_latency: 0.0,
            buffer_slots: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    /// Per-axis bound of the uniform disturbance acceleration (m/s²).
    pub bound: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { bound: 0.0 }
    }
}

/// Settings of the analytic receding-horizon controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub alpha: f64,
    pub beta: f64,
    pub planning_horizon: usize,
    pub riccati_step: f64,
    pub terminal_mode: TerminalMode,
    pub evader: EvaderMode,
    pub separation_gain: f64,
    pub episodes: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta: 1e-7,
            planning_horizon: 20,
            riccati_step: 0.1,
            terminal_mode: TerminalMode::Laplacian,
            evader: EvaderMode::Flee,
            separation_gain: 10.0,
            episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub smoothing_window: usize,
    pub consistency_window: usize,
    pub consistency_divisor: ConsistencyDivisor,
    pub eval_episodes: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            smoothing_window: 51,
            consistency_window: 50,
            consistency_divisor: ConsistencyDivisor::M,
            eval_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub system: SystemConfig,
    pub weights: WeightsConfig,
    pub vehicle: VehicleConfig,
    pub water: WaterConfig,
    pub acoustics: AcousticsConfig,
    pub disturbance: DisturbanceConfig,
    pub solver: SolverConfig,
    pub dqn: DqnHyperparams,
    pub analysis: AnalysisConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            system: SystemConfig::default(),
            weights: WeightsConfig::default(),
            vehicle: VehicleConfig::default(),
            water: WaterConfig::default(),
            acoustics: AcousticsConfig::default(),
            disturbance: DisturbanceConfig::default(),
            solver: SolverConfig::default(),
            dqn: DqnHyperparams::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive and finite, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        if s.num_pursuers < 2 {
            return Err(bad("system.num_pursuers", format!("need at least 2 pursuers, got {}", s.num_pursuers)));
        }
        for (key, v) in [
            ("system.initial_distance", s.initial_distance),
            ("system.pursuer_max_speed", s.pursuer_max_speed),
            ("system.target_max_speed", s.target_max_speed),
            ("system.pursuer_acceleration", s.pursuer_acceleration),
            ("system.target_acceleration", s.target_acceleration),
            ("system.pursuer_heading_limit", s.pursuer_heading_limit),
            ("system.target_heading_limit", s.target_heading_limit),
            ("system.safety_radius", s.safety_radius),
            ("system.slot_seconds", s.slot_seconds),
            ("weights.alpha", self.weights.alpha),
            ("weights.beta", self.weights.beta),
            ("weights.exponent", self.weights.exponent),
            ("solver.alpha", self.solver.alpha),
            ("solver.beta", self.solver.beta),
            ("solver.riccati_step", self.solver.riccati_step),
        ] {
            positive(key, v)?;
        }
        if s.start_point.iter().any(|v| !v.is_finite()) {
            return Err(bad("system.start_point", "coordinates must be finite"));
        }
        if s.pursuer_heading_limit > FRAC_PI_2 {
            return Err(bad("system.pursuer_heading_limit", "must not exceed pi/2"));
        }
        if s.target_heading_limit > PI {
            return Err(bad("system.target_heading_limit", "must not exceed pi"));
        }
        if s.attack_radius >= s.sense_radius {
            return Err(bad(
                "system.attack_radius",
                format!("must be below system.sense_radius ({} >= {})", s.attack_radius, s.sense_radius),
            ));
        }
        if s.safety_radius >= s.attack_radius {
            return Err(bad(
                "system.safety_radius",
                format!("must be below system.attack_radius ({} >= {})", s.safety_radius, s.attack_radius),
            ));
        }
        if !(s.escape_value != 0.0 && s.escape_value.is_finite()) {
            return Err(bad("system.escape_value", "must be non-zero (its reciprocal is the terminal weight)"));
        }
        if !(s.capture_value != 0.0 && s.capture_value.is_finite()) {
            return Err(bad("system.capture_value", "must be non-zero (its reciprocal is the terminal weight)"));
        }
        if s.max_slots == 0 {
            return Err(bad("system.max_slots", "must be positive"));
        }
        if !(0.0..=s.pursuer_max_speed).contains(&s.pursuer_initial_speed) {
            return Err(bad("system.pursuer_initial_speed", "must lie in [0, pursuer_max_speed]"));
        }
        if !(0.0..=s.target_max_speed).contains(&s.target_initial_speed) {
            return Err(bad("system.target_initial_speed", "must lie in [0, target_max_speed]"));
        }
        if s.initial_distance <= s.attack_radius {
            return Err(bad("system.initial_distance", "target would start inside the attack radius"));
        }
        self.vehicle_params(Role::Pursuer).validate().map_err(|e| bad("vehicle", e))?;
        WaterColumn::new(self.water.temperature, self.water.salinity, self.water.pressure).map_err(|e| bad("water", e))?;
        if !(self.acoustics.link_latency >= 0.0 && self.acoustics.link_latency.is_finite()) {
            return Err(bad("acoustics.link_latency", "must be non-negative"));
        }
        if self.acoustics.buffer_slots == 0 {
            return Err(bad("acoustics.buffer_slots", "must be positive"));
        }
        if !(self.disturbance.bound >= 0.0 && self.disturbance.bound.is_finite()) {
            return Err(bad("disturbance.bound", "must be non-negative"));
        }
        if self.solver.planning_horizon == 0 {
            return Err(bad("solver.planning_horizon", "must be positive"));
        }
        if !(self.solver.separation_gain >= 0.0) {
            return Err(bad("solver.separation_gain", "must be non-negative"));
        }
        self.dqn.validate()?;
        let a = &self.analysis;
        if a.smoothing_window == 0 || a.smoothing_window % 2 == 0 {
            return Err(bad("analysis.smoothing_window", "must be odd and positive"));
        }
        if a.consistency_window < 2 {
            return Err(bad("analysis.consistency_window", "must be at least 2"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the fully resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn origin(&self) -> Vector2<f64> {
        Vector2::new(self.system.start_point[0], self.system.start_point[1])
    }

    pub fn termination(&self) -> TerminationConfig {
        let s = &self.system;
        TerminationConfig {
            safety_radius: s.safety_radius,
            sense_radius: s.sense_radius,
            attack_radius: s.attack_radius,
            escape_value: s.escape_value,
            capture_value: s.capture_value,
            horizon: s.max_slots,
            strict_escape: s.strict_escape,
        }
    }

    pub fn vehicle_params(&self, role: Role) -> VehicleParams {
        let max = match role {
            Role::Pursuer => self.system.pursuer_max_speed,
            Role::Evader => self.system.target_max_speed,
        };
        VehicleParams {
            inertia_diag: self.vehicle.inertia,
            damping_diag: self.vehicle.damping,
            coriolis_mode: self.vehicle.coriolis,
            restoring: self.vehicle.restoring,
            max_speed: max * KNOT,
        }
    }

    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            dt: self.system.slot_seconds,
            pursuer: self.vehicle_params(Role::Pursuer),
            evader: self.vehicle_params(Role::Evader),
            pursuer_accel_cap: self.system.pursuer_acceleration * KNOT,
            evader_accel_cap: self.system.target_acceleration * KNOT,
            pursuer_heading_limit: self.system.pursuer_heading_limit,
            disturbance_bound: self.disturbance.bound,
            termination: self.termination(),
        }
    }

    /// Weights of the reported pay-off and the per-slot reward.
    pub fn game_weights(&self) -> PayoffWeights {
        let w = &self.weights;
        PayoffWeights::uniform(self.system.num_pursuers, w.alpha, w.beta, w.exponent)
    }

    pub fn planner(&self) -> PlannerConfig {
        let s = &self.solver;
        PlannerConfig {
            weights: PayoffWeights::uniform(self.system.num_pursuers, s.alpha, s.beta, self.weights.exponent),
            planning_horizon: s.planning_horizon,
            riccati_step: s.riccati_step,
            terminal_mode: s.terminal_mode,
            evader: s.evader,
            separation_gain: s.separation_gain,
        }
    }

    pub fn sound_speed(&self) -> Result<f64> {
        sound_speed(&WaterColumn::new(self.water.temperature, self.water.salinity, self.water.pressure)?)
    }

    pub fn delay_model(&self) -> Result<DelayModel> {
        Ok(DelayModel {
            mode: self.acoustics.mode,
            sound_speed: self.sound_speed()?,
            latency: self.acoustics.link_latency,
        })
    }

    pub fn action_spec(&self) -> Result<ActionSpec> {
        ActionSpec::new(
            self.dqn.heading_bins,
            self.system.pursuer_heading_limit,
            self.system.pursuer_acceleration * KNOT,
        )
    }

    pub fn obs_context(&self) -> ObsContext {
        ObsContext {
            sense_radius: self.system.sense_radius,
            max_speed: self.system.pursuer_max_speed * KNOT,
            horizon: self.system.max_slots,
            dt: self.system.slot_seconds,
        }
    }

    /// Fresh agent with weights drawn from the init stream.
    pub fn new_agent(&self) -> Result<Agent> {
        let mut rng = rng_stream(self.seed, Stream::Init);
        Agent::new(self.dqn.clone(), self.action_spec()?, self.obs_context(), &mut rng)
    }
}

/// Reads and validates a scenario file; unset keys take their defaults.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Independent random streams derived from the one run seed. Each
/// subsystem owns a stream so that changing, say, the disturbance bound
/// leaves placement and exploration draws untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Placement = 0,
    Disturbance = 1,
    Exploration = 2,
    Replay = 3,
    Init = 4,
}

pub fn rng_stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Radius of the pursuer ring: 2r, widened if needed so that neighbouring
/// pursuers on the ring stay more than r apart.
pub fn ring_radius(m: usize, r: f64) -> f64 {
    let chord_limited = if m > 1 { r / (PI / m as f64).sin() } else { 0.0 };
    (2.0 * r).max(chord_limited * (1.0 + 1e-9))
}

/// Pursuers evenly spaced on a ring around O moving towards the target at
/// their initial speed; the target uniformly placed on the circle of the
/// initial distance with a uniform random heading.
pub fn place_initial<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<World> {
    let s = &config.system;
    let o = config.origin();
    let depth = s.start_point[2];
    let m = s.num_pursuers;
    let theta = rng.gen_range(-PI..PI);
    let target_pos = o + Vector2::new(s.initial_distance * theta.cos(), s.initial_distance * theta.sin());
    let target_heading = rng.gen_range(-s.target_heading_limit..s.target_heading_limit);
    let ring = ring_radius(m, s.safety_radius);
    let v0 = s.pursuer_initial_speed * KNOT;
    let pursuers = (0..m)
        .map(|k| {
            let a = TAU * k as f64 / m as f64;
            let pos = o + Vector2::new(ring * a.cos(), ring * a.sin());
            let dir = target_pos - pos;
            let bearing = dir.y.atan2(dir.x);
            let heading = fold_half_plane(bearing);
            // Folding reverses the body axis, so the surge sign follows.
            let surge = if (bearing - heading).abs() < 1e-9 { v0 } else { -v0 };
            Vehicle::new(AgentPose::new(pos.x, pos.y, depth, heading), BodyVelocity::new(surge, 0.0, 0.0), Role::Pursuer)
        })
        .collect();
    let target = Vehicle::new(
        AgentPose::new(target_pos.x, target_pos.y, depth, target_heading),
        BodyVelocity::new(s.target_initial_speed * KNOT, 0.0, 0.0),
        Role::Evader,
    );
    World::new(config.env_params(), pursuers, target, o)
}
