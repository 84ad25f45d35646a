use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{Adam, Mlp};
use super::replay::{ReplayBuffer, Transition};
use crate::acoustics::{average_delay, delay_slots, DelayBuffer};
use crate::dynamics::{ControlInput, Role};
use crate::env::{evader_flee, EpisodeLog, Vehicle, World};
use crate::error::{domain, Error, Result};
use crate::game::{
    check_termination, step_integrand, Controls, EpisodeOutcome, GameState, OutcomeKind, PayoffWeights, Termination,
    TerminationConfig, Trajectory, TrajectoryStep,
};

/// Lower guard on the step pay-off inside the reciprocal reward.
pub const REWARD_FLOOR: f64 = 1e-6;

/// Width of the observation vector.
pub const OBS_DIM: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnHyperparams {
    pub learning_rate: f64,
    pub episodes: usize,
    pub discount: f64,
    pub batch_size: usize,
    pub memory_capacity: usize,
    /// Probability of acting greedily.
    pub epsilon: f64,
    pub target_sync_interval: usize,
    pub hidden_sizes: [usize; 2],
    pub heading_bins: usize,
    /// Slots t₀ that use the random-walk branch before the delayed policy starts.
    pub warmup_slots: usize,
    /// When non-zero the greedy probability ramps from 0 to `epsilon` over
    /// this many episodes.
    pub epsilon_anneal_episodes: usize,
    /// Replay size needed before gradient steps start (at least one batch).
    pub train_start: usize,
    /// Slots each decision is held for; rewards inside are summed and the
    /// discount applies once per decision.
    pub decision_interval: usize,
}

impl Default for DqnHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.0002,
            episodes: 5000,
            discount: 0.9,
            batch_size: 128,
            memory_capacity: 10000,
            epsilon: 0.9,
            target_sync_interval: 100,
            hidden_sizes: [64, 64],
            heading_bins: 7,
            warmup_slots: 5,
            epsilon_anneal_episodes: 0,
            train_start: 128,
            decision_interval: DEFAULT_DECISION_INTERVAL,
        }
    }
}

impl DqnHyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: &str| Err(Error::Config(format!("dqn.{key}: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return fail("discount", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail("epsilon", "must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive");
        }
        if self.memory_capacity < self.batch_size {
            return fail("memory_capacity", "must be at least batch_size");
        }
        if self.target_sync_interval == 0 {
            return fail("target_sync_interval", "must be positive");
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return fail("hidden_sizes", "layers must be non-empty");
        }
        if self.heading_bins < 2 {
            return fail("heading_bins", "need at least two bins");
        }
        if self.decision_interval == 0 {
            return fail("decision_interval", "must be positive");
        }
        Ok(())
    }

    /// Greedy probability used during training episode `episode`.
    pub fn greedy_probability(&self, episode: usize) -> f64 {
        if self.epsilon_anneal_episodes == 0 {
            self.epsilon
        } else {
            self.epsilon * (episode as f64 / self.epsilon_anneal_episodes as f64).min(1.0)
        }
    }
}

pub const DEFAULT_DECISION_INTERVAL: usize = 10;

/// Discrete pursuer actions: heading bins over [−lim, lim] crossed with
/// three acceleration levels {+cap, 0, −cap}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub heading_bins: usize,
    pub heading_limit: f64,
    pub accel_cap: f64,
}

impl ActionSpec {
    pub const LEVELS: usize = 3;

    pub fn new(heading_bins: usize, heading_limit: f64, accel_cap: f64) -> Result<Self> {
        if heading_bins < 2 {
            return Err(domain("need at least two heading bins"));
        }
        if !(heading_limit > 0.0 && heading_limit <= FRAC_PI_2) {
            return Err(domain("heading limit must lie in (0, pi/2]"));
        }
        if !(accel_cap > 0.0) {
            return Err(domain("acceleration cap must be positive"));
        }
        Ok(Self {
            heading_bins,
            heading_limit,
            accel_cap,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.heading_bins * Self::LEVELS
    }

    pub fn heading(&self, action: usize) -> f64 {
        let bin = action / Self::LEVELS;
        -self.heading_limit + 2.0 * self.heading_limit * bin as f64 / (self.heading_bins - 1) as f64
    }

    pub fn surge_accel(&self, action: usize) -> f64 {
        match action % Self::LEVELS {
            0 => self.accel_cap,
            1 => 0.0,
            _ => -self.accel_cap,
        }
    }

    pub fn decode(&self, action: usize) -> Result<ControlInput> {
        if action >= self.num_actions() {
            return Err(domain(format!("action {action} out of range 0..{}", self.num_actions())));
        }
        let psi = self.heading(action).clamp(-self.heading_limit, self.heading_limit);
        ControlInput::new(self.surge_accel(action), 0.0, psi, Role::Pursuer, self.accel_cap)
    }
}

/// Normalisation constants for observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsContext {
    pub sense_radius: f64,
    pub max_speed: f64,
    pub horizon: usize,
    pub dt: f64,
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Observation of pursuer i: delayed relative target vector (scaled and as a
/// unit direction), own signed surge, heading and world velocity (live),
/// mean teammate offset from the delayed state, and the delay itself.
pub fn observation_from_state(
    state: &GameState,
    lag_slots: usize,
    i: usize,
    own: &Vehicle,
    ctx: &ObsContext,
) -> Result<Vec<f64>> {
    let m = state.num_pursuers();
    if i >= m {
        return Err(domain(format!("pursuer index {i} out of range")));
    }
    let e = state.target - state.pursuers[i];
    let unit = if e.norm() > 0.0 { e / e.norm() } else { Vector2::zeros() };
    let vel = own.world_velocity() / ctx.max_speed;
    let mates = if m > 1 {
        state.pursuers.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, u)| u - state.pursuers[i]).sum::<Vector2<f64>>()
            / (m - 1) as f64
    } else {
        Vector2::zeros()
    };
    Ok(vec![
        clamp_unit(e.x / ctx.sense_radius),
        clamp_unit(e.y / ctx.sense_radius),
        unit.x,
        unit.y,
        clamp_unit(own.vel.surge / ctx.max_speed),
        clamp_unit(own.pose.heading / PI),
        clamp_unit(vel.x),
        clamp_unit(vel.y),
        clamp_unit(mates.x / ctx.sense_radius),
        clamp_unit(mates.y / ctx.sense_radius),
        clamp_unit(lag_slots as f64 / ctx.horizon as f64),
    ])
}

/// Encodes pursuer i's view of the state `delay` seconds before slot `now`.
pub fn encode_observation(
    buffer: &DelayBuffer,
    now: usize,
    delay: f64,
    i: usize,
    own: &Vehicle,
    ctx: &ObsContext,
) -> Result<Vec<f64>> {
    let lag = delay_slots(delay / ctx.dt)?;
    let view = buffer.delayed_view(now, lag as f64)?;
    observation_from_state(view.state, lag, i, own, ctx)
}

/// Which branch produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSource {
    WarmUp,
    Greedy,
    Explore,
    Random,
}

/// Lowest index among the minimal entries.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = k;
        }
    }
    best
}

/// With probability `greedy_prob` the action of least predicted pay-off,
/// otherwise a uniform draw. Always consumes exactly one uniform variate
/// before the optional index draw.
pub fn select_action<R: Rng + ?Sized>(net: &Mlp, obs: &[f64], greedy_prob: f64, rng: &mut R) -> (usize, ActionSource) {
    let u: f64 = rng.gen();
    if u < greedy_prob {
        let q = net.forward(obs);
        (argmin(q.as_slice()), ActionSource::Greedy)
    } else {
        (rng.gen_range(0..net.output_dim()), ActionSource::Explore)
    }
}

/// Reward for one slot: b on capture, a on escape, otherwise the reciprocal
/// of the step pay-off evaluated at the delayed state. A collision (singular
/// penalty) earns nothing.
pub fn step_reward(
    delayed: &GameState,
    controls: &Controls,
    outcome: Option<OutcomeKind>,
    weights: &PayoffWeights,
    cfg: &TerminationConfig,
    dt: f64,
) -> Result<f64> {
    match outcome {
        Some(OutcomeKind::Capture) => Ok(cfg.capture_value),
        Some(OutcomeKind::Escape) => Ok(cfg.escape_value),
        _ => match step_integrand(delayed, controls, weights, cfg, dt) {
            Ok(pe) => Ok(1.0 / pe.max(REWARD_FLOOR)),
            Err(Error::Singular(_)) => Ok(0.0),
            Err(e) => Err(e),
        },
    }
}

/// c + χ·min_a' Q_target(s', a'), or c alone for terminal transitions.
pub fn td_target(cost: f64, terminal: bool, min_next_q: f64, discount: f64) -> f64 {
    if terminal {
        cost
    } else {
        cost + discount * min_next_q
    }
}

/// Online and target networks with their optimiser and replay memory.
#[derive(Debug, Clone)]
pub struct Agent {
    pub hyper: DqnHyperparams,
    pub spec: ActionSpec,
    pub obs: ObsContext,
    pub online: Mlp,
    pub target: Mlp,
    pub adam: Adam,
    pub replay: ReplayBuffer,
    pub train_steps: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(hyper: DqnHyperparams, spec: ActionSpec, obs: ObsContext, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let sizes = [OBS_DIM, hyper.hidden_sizes[0], hyper.hidden_sizes[1], spec.num_actions()];
        let online = Mlp::new(&sizes, rng)?;
        Self::from_network(hyper, spec, obs, online)
    }

    pub fn from_network(hyper: DqnHyperparams, spec: ActionSpec, obs: ObsContext, online: Mlp) -> Result<Self> {
        if online.output_dim() != spec.num_actions() {
            return Err(domain("network output does not match the action count"));
        }
        Ok(Self {
            adam: Adam::new(online.num_params(), hyper.learning_rate),
            replay: ReplayBuffer::new(hyper.memory_capacity)?,
            target: online.clone(),
            online,
            hyper,
            spec,
            obs,
            train_steps: 0,
        })
    }

    /// One gradient step on a uniform replay batch. Returns `None` (skip)
    /// while the memory is still too small.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let need = self.hyper.batch_size.max(self.hyper.train_start);
        if self.replay.len() < need {
            return Ok(None);
        }
        let Some(batch) = self.replay.sample(self.hyper.batch_size, rng) else {
            return Ok(None);
        };
        let dim = self.online.input_dim();
        let b = batch.len();
        let x = DMatrix::from_fn(dim, b, |r, c| batch[c].obs[r]);
        let xn = DMatrix::from_fn(dim, b, |r, c| batch[c].next_obs[r]);
        let qn = self.target.forward_batch(&xn);
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let min_next = qn.column(j).min();
                td_target(t.cost, t.terminal, min_next, self.hyper.discount)
            })
            .collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, grad) = self.online.td_loss_and_grad(&x, &actions, &targets)?;
        let mut params = self.online.params();
        self.adam.step(&mut params, &grad);
        self.online.set_params(&params)?;
        self.train_steps += 1;
        if self.train_steps % self.hyper.target_sync_interval as u64 == 0 {
            self.target = self.online.clone();
        }
        Ok(Some(loss))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayMode {
    Off,
    Acoustic,
}

/// How the communication delay is computed each slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub mode: DelayMode,
    pub sound_speed: f64,
    /// Fixed per-link modem latency added to the acoustic travel time (s).
    pub latency: f64,
}

impl DelayModel {
    pub fn off() -> Self {
        Self {
            mode: DelayMode::Off,
            sound_speed: 1500.0,
            latency: 0.0,
        }
    }

    /// Delay in seconds for the world's current configuration.
    pub fn delay(&self, world: &World) -> Result<f64> {
        match self.mode {
            DelayMode::Off => Ok(0.0),
            DelayMode::Acoustic => average_delay(&world.state(), &world.speeds(), self.sound_speed, self.latency),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyMode {
    /// ε-greedy on the shared network with the given greedy probability.
    Learned { greedy_prob: f64 },
    /// Uniform random actions every slot.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOptions {
    pub delay: DelayModel,
    pub policy: PolicyMode,
    pub train: bool,
    /// History kept for delayed lookups, in slots.
    pub buffer_slots: usize,
}

/// What happened in one slot of the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    pub delay_seconds: f64,
    pub delay_slots: usize,
    pub warm_up: bool,
    pub sources: Vec<ActionSource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub outcome: EpisodeOutcome,
    pub trajectory: Trajectory,
    pub log: EpisodeLog,
    pub total_reward: f64,
    pub steps: usize,
    pub delay_mean_slots: f64,
    pub loss_mean: Option<f64>,
    pub slots: Vec<SlotRecord>,
}

/// Random streams consumed by one episode.
pub struct EpisodeRngs<'a, R: Rng + ?Sized> {
    pub disturbance: &'a mut R,
    pub exploration: &'a mut R,
    pub replay: &'a mut R,
}

/// Decision in progress: actions held for up to `decision_interval` slots.
struct Pending {
    obs: Vec<Vec<f64>>,
    actions: Vec<usize>,
    sources: Vec<ActionSource>,
    reward: f64,
    slots: usize,
}

/// One episode of the delayed DQN loop.
///
/// Each slot: compute the average link delay and floor it to δ slots; while
/// k − δ ≤ t₀ the pursuers random-walk; afterwards each acts on s(k − δ).
/// A decision is held for `decision_interval` slots, its rewards summed into
/// one transition. One gradient step is taken per slot. The episode ends on
/// capture, escape or the slot cap.
pub fn run_episode<R: Rng + ?Sized>(
    world: &mut World,
    agent: &mut Agent,
    opts: &EpisodeOptions,
    game_weights: &PayoffWeights,
    rngs: EpisodeRngs<'_, R>,
) -> Result<EpisodeReport> {
    let EpisodeRngs {
        disturbance,
        exploration,
        replay,
    } = rngs;
    let m = world.num_pursuers();
    let term = world.params.termination;
    let dt = world.params.dt;
    let ctx = agent.obs;
    let t0 = agent.hyper.warmup_slots as i64;
    let interval = agent.hyper.decision_interval.max(1);
    let n_actions = agent.spec.num_actions();
    let mut buffer = DelayBuffer::new(opts.buffer_slots);
    buffer.push(world.state())?;
    let mut log = EpisodeLog::start(world);
    let mut steps = Vec::new();
    let mut slots = Vec::new();
    let mut total_reward = 0.0;
    let mut losses = Vec::new();
    let mut delay = opts.delay.delay(world)?;
    let mut pending: Option<Pending> = None;

    let outcome = loop {
        let state = world.state();
        if let Termination::Ended(kind) = check_termination(&state, &term) {
            break kind;
        }
        let k = state.slot;
        let lag = delay_slots(delay / dt)?;
        let warm = k as i64 - lag as i64 <= t0;
        let view_state = buffer.delayed_view(k, lag as f64)?.state.clone();

        let (actions, sources) = if warm {
            // A longer delay can push the loop back into warm-up; the open
            // decision is dropped rather than stored.
            pending = None;
            let a: Vec<usize> = (0..m).map(|_| exploration.gen_range(0..n_actions)).collect();
            (a, vec![ActionSource::WarmUp; m])
        } else {
            if pending.is_none() {
                let mut obs = Vec::with_capacity(m);
                let mut actions = Vec::with_capacity(m);
                let mut sources = Vec::with_capacity(m);
                for i in 0..m {
                    let o = observation_from_state(&view_state, lag, i, &world.pursuers[i], &ctx)?;
                    let (a, src) = match opts.policy {
                        PolicyMode::Random => (exploration.gen_range(0..n_actions), ActionSource::Random),
                        PolicyMode::Learned { greedy_prob } => select_action(&agent.online, &o, greedy_prob, exploration),
                    };
                    obs.push(o);
                    actions.push(a);
                    sources.push(src);
                }
                pending = Some(Pending {
                    obs,
                    actions,
                    sources,
                    reward: 0.0,
                    slots: 0,
                });
            }
            let p = pending.as_ref().expect("decision just made");
            (p.actions.clone(), p.sources.clone())
        };
        let ctrls = actions
            .iter()
            .map(|&a| agent.spec.decode(a))
            .collect::<Result<Vec<_>>>()?;
        let evader = evader_flee(world)?;
        let controls = world.step(&ctrls, &evader, disturbance)?;
        let next = world.state();
        buffer.push(next.clone())?;
        let ended = match check_termination(&next, &term) {
            Termination::Ended(kind) => Some(kind),
            Termination::Continue => None,
        };
        let reward = step_reward(&view_state, &controls, ended, game_weights, &term, dt)?;
        let next_delay = opts.delay.delay(world)?;

        let close = match pending.as_mut() {
            Some(p) => {
                p.reward += reward;
                p.slots += 1;
                p.slots == interval || ended.is_some() || next.slot >= term.horizon
            }
            None => false,
        };
        if close {
            let p = pending.take().expect("open decision");
            if opts.train {
                let next_lag = delay_slots(next_delay / dt)?;
                let next_view = buffer.delayed_view(next.slot, next_lag as f64)?.state.clone();
                // Timeouts are bootstrapped: the cap is not part of the state.
                let terminal = matches!(ended, Some(OutcomeKind::Capture | OutcomeKind::Escape));
                for (i, obs) in p.obs.into_iter().enumerate() {
                    let next_obs = observation_from_state(&next_view, next_lag, i, &world.pursuers[i], &ctx)?;
                    agent.replay.push(Transition {
                        obs,
                        action: p.actions[i],
                        cost: -p.reward,
                        next_obs,
                        terminal,
                    });
                }
            }
        }
        if opts.train {
            if let Some(loss) = agent.train_step(replay)? {
                losses.push(loss);
            }
        }

        total_reward += reward;
        log.record(world, reward);
        slots.push(SlotRecord {
            slot: k,
            delay_seconds: delay,
            delay_slots: lag,
            warm_up: warm,
            sources,
        });
        steps.push(TrajectoryStep { state, controls });
        delay = next_delay;
        if let Some(kind) = ended {
            break kind;
        }
    };

    let trajectory = Trajectory {
        steps,
        final_state: world.state(),
        outcome,
        origin: world.origin,
        dt,
    };
    let outcome = EpisodeOutcome::from_trajectory(&trajectory, game_weights, &term)?;
    let n = slots.len();
    let delay_mean_slots = if n == 0 {
        0.0
    } else {
        slots.iter().map(|s| s.delay_slots as f64).sum::<f64>() / n as f64
    };
    let loss_mean = if losses.is_empty() {
        None
    } else {
        Some(losses.iter().sum::<f64>() / losses.len() as f64)
    };
    Ok(EpisodeReport {
        outcome,
        trajectory,
        log,
        total_reward,
        steps: n,
        delay_mean_slots,
        loss_mean,
        slots,
    })
}
