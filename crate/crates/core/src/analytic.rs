//! Zero-delay equilibrium machinery: Hamiltonian, stationary controls,
//! backward Riccati integration and the receding-horizon feedback loop.
//!
//! The value-gradient ansatz ∇V = P·s turns the game into a matrix Riccati
//! equation. The state-dependent penalty weights are frozen at the current
//! state and the equation is re-solved every slot.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::step_reward;
use crate::env::{evader_flee, evader_towards, velocity_command, EpisodeLog, World};
use crate::error::{domain, Error, Result};
use crate::game::{
    check_termination, penalty_weight, target_weight, EpisodeOutcome, GameState, LinearGameMatrices, OutcomeKind,
    PayoffWeights, Termination, Trajectory, TrajectoryStep,
};

/// Norm beyond which the backward integration is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Control weights frozen at one state: W_i = α_i g_i^d + β_i g_i^c for each
/// pursuer and S = Σ_i ‖U_i − T‖⁻² for the target.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenWeights {
    pub pursuer: Vec<f64>,
    pub target: f64,
}

impl FrozenWeights {
    pub fn at(state: &GameState, weights: &PayoffWeights, safety_radius: f64) -> Result<Self> {
        let m = state.num_pursuers();
        let pursuer = (0..m)
            .map(|i| penalty_weight(state, i, weights, safety_radius))
            .collect::<Result<Vec<_>>>()?;
        let target = (0..m).map(|i| target_weight(state, i)).sum::<Result<f64>>()?;
        let fw = Self { pursuer, target };
        fw.validate()?;
        Ok(fw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pursuer.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(domain("pursuer penalty weights must be positive and finite"));
        }
        if !(self.target > 0.0 && self.target.is_finite()) {
            return Err(domain("target distance weight must be positive and finite"));
        }
        Ok(())
    }

    /// R⁻¹ = blockdiag(W_i⁻¹ I_d).
    pub fn r_inverse(&self, control_dim: usize) -> DMatrix<f64> {
        let n = self.pursuer.len() * control_dim;
        DMatrix::from_fn(n, n, |r, c| if r == c { 1.0 / self.pursuer[r / control_dim] } else { 0.0 })
    }

    /// Harmonic mean of the pursuer weights.
    pub fn harmonic_mean(&self) -> f64 {
        self.pursuer.len() as f64 / self.pursuer.iter().map(|w| 1.0 / w).sum::<f64>()
    }
}

fn check_dims(matrices: &LinearGameMatrices, m: usize) -> Result<()> {
    if matrices.num_pursuers() != m {
        return Err(domain(format!(
            "matrices sized for {} pursuers, weights for {m}",
            matrices.num_pursuers()
        )));
    }
    Ok(())
}

/// H = ∇Vᵀ ṡ + ½ Σ_i [W_i ‖p_i‖² − ‖q‖² ‖U_i − T‖⁻²], with ṡ from the
/// linear model at zero delay.
pub fn hamiltonian(
    state: &GameState,
    p: &DVector<f64>,
    q: &DVector<f64>,
    grad: &DVector<f64>,
    weights: &PayoffWeights,
    safety_radius: f64,
    matrices: &LinearGameMatrices,
) -> Result<f64> {
    let m = state.num_pursuers();
    check_dims(matrices, m)?;
    let d = matrices.pursuer_control_dim;
    if p.len() != m * d || q.len() != matrices.g21.ncols() || grad.len() != matrices.state_dim() {
        return Err(domain("control or gradient dimension mismatch"));
    }
    let s = state.to_vector();
    if s.len() != matrices.state_dim() {
        return Err(domain("state dimension does not match the game matrices"));
    }
    let transport = grad.dot(&matrices.state_derivative(&s, p, q));
    let q2 = q.norm_squared();
    let mut running = 0.0;
    for i in 0..m {
        let w = penalty_weight(state, i, weights, safety_radius)?;
        running += w * p.rows(i * d, d).norm_squared() - q2 * target_weight(state, i)?;
    }
    Ok(transport + 0.5 * running)
}

/// Stationary controls for a value gradient:
/// p_i* = −W_i⁻¹ (G12ᵀ∇V)_i and q* = G21ᵀ∇V / S.
pub fn optimal_controls(
    fw: &FrozenWeights,
    grad: &DVector<f64>,
    matrices: &LinearGameMatrices,
) -> Result<(DVector<f64>, DVector<f64>)> {
    fw.validate()?;
    check_dims(matrices, fw.pursuer.len())?;
    if grad.len() != matrices.state_dim() {
        return Err(domain("gradient dimension mismatch"));
    }
    let d = matrices.pursuer_control_dim;
    let mut p = matrices.g12.tr_mul(grad);
    for (k, v) in p.iter_mut().enumerate() {
        *v /= -fw.pursuer[k / d];
    }
    let q = matrices.g21.tr_mul(grad) / fw.target;
    Ok((p, q))
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

/// Ṗ = −FᵀP − PF + P G12 R⁻¹ G12ᵀ P − P G21 G21ᵀ P / S.
pub fn riccati_rhs(p: &DMatrix<f64>, fw: &FrozenWeights, matrices: &LinearGameMatrices) -> Result<DMatrix<f64>> {
    check_dims(matrices, fw.pursuer.len())?;
    let n = matrices.state_dim();
    if p.shape() != (n, n) {
        return Err(domain("P must be n_s x n_s"));
    }
    let d = riccati_coupling(fw, matrices);
    let mut out = -matrices.f.tr_mul(p) - p * &matrices.f + p * d * p;
    symmetrize(&mut out);
    Ok(out)
}

/// D = G12 R⁻¹ G12ᵀ − G21 G21ᵀ / S.
pub fn riccati_coupling(fw: &FrozenWeights, matrices: &LinearGameMatrices) -> DMatrix<f64> {
    let g12 = &matrices.g12;
    let g21 = &matrices.g21;
    g12 * fw.r_inverse(matrices.pursuer_control_dim) * g12.transpose() - g21 * g21.transpose() / fw.target
}

/// Backward solution on a uniform grid, stored from the terminal time down.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub p: Vec<DMatrix<f64>>,
    pub terminal: DMatrix<f64>,
}

impl RiccatiSolution {
    /// P at the initial (earliest) grid time.
    pub fn initial(&self) -> &DMatrix<f64> {
        self.p.last().expect("solution grid is never empty")
    }

    pub fn step(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[0] - self.times[1]
        }
    }

    /// P at the j-th grid point counted forward from the initial time.
    pub fn forward(&self, j: usize) -> &DMatrix<f64> {
        &self.p[self.p.len() - 1 - j]
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.p.iter().map(|m| (m - m.transpose()).abs().max()).fold(0.0, f64::max)
    }
}

/// Integrates the Riccati equation backward from `t_final` (where P = P_f)
/// to `t0` with classical RK4 at a step no larger than `step`.
pub fn solve_riccati(
    terminal: &DMatrix<f64>,
    t0: f64,
    t_final: f64,
    fw: &FrozenWeights,
    matrices: &LinearGameMatrices,
    step: f64,
) -> Result<RiccatiSolution> {
    if !(step > 0.0) {
        return Err(domain("integration step must be positive"));
    }
    if !(t_final >= t0) {
        return Err(domain("terminal time precedes the initial time"));
    }
    if (terminal - terminal.transpose()).abs().max() > 1e-9 * (1.0 + terminal.abs().max()) {
        return Err(domain("terminal matrix must be symmetric"));
    }
    fw.validate()?;
    let n_steps = ((t_final - t0) / step - 1e-9).ceil().max(0.0) as usize;
    let h = if n_steps == 0 { 0.0 } else { (t_final - t0) / n_steps as f64 };
    let d = riccati_coupling(fw, matrices);
    let f = &matrices.f;
    // In reversed time τ = t_final − t the equation reads dP/dτ = FᵀP + PF − P D P.
    let rev = |p: &DMatrix<f64>| -> DMatrix<f64> { f.tr_mul(p) + p * f - p * &d * p };

    let mut p = terminal.clone();
    symmetrize(&mut p);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut ps = Vec::with_capacity(n_steps + 1);
    times.push(t_final);
    ps.push(p.clone());
    for k in 1..=n_steps {
        let k1 = rev(&p);
        let k2 = rev(&(&p + &k1 * (h / 2.0)));
        let k3 = rev(&(&p + &k2 * (h / 2.0)));
        let k4 = rev(&(&p + &k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        symmetrize(&mut p);
        let t = t_final - k as f64 * h;
        let norm = p.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { time: t, norm });
        }
        times.push(t);
        ps.push(p.clone());
    }
    Ok(RiccatiSolution {
        times,
        p: ps,
        terminal: terminal.clone(),
    })
}

/// Linear feedback p = K12 s, q = K21 s.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGains {
    /// One d×n_s block per pursuer.
    pub k12: Vec<DMatrix<f64>>,
    pub k21: DMatrix<f64>,
}

impl FeedbackGains {
    pub fn stacked_k12(&self) -> DMatrix<f64> {
        let n = self.k21.ncols();
        let rows: usize = self.k12.iter().map(|k| k.nrows()).sum();
        let mut out = DMatrix::zeros(rows, n);
        let mut r = 0;
        for k in &self.k12 {
            out.rows_mut(r, k.nrows()).copy_from(k);
            r += k.nrows();
        }
        out
    }

    pub fn pursuer_norm(&self) -> f64 {
        self.k12.iter().map(|k| k.norm_squared()).sum::<f64>().sqrt()
    }
}

/// K12^i = −W_i⁻¹ (G12ᵀP)_i and K21 = G21ᵀP / S.
pub fn feedback_gains(p: &DMatrix<f64>, fw: &FrozenWeights, matrices: &LinearGameMatrices) -> Result<FeedbackGains> {
    fw.validate()?;
    check_dims(matrices, fw.pursuer.len())?;
    let d = matrices.pursuer_control_dim;
    let g12tp = matrices.g12.tr_mul(p);
    let k12 = (0..fw.pursuer.len())
        .map(|i| g12tp.rows(i * d, d) * (-1.0 / fw.pursuer[i]))
        .collect();
    let k21 = matrices.g21.tr_mul(p) / fw.target;
    Ok(FeedbackGains { k12, k21 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalMode {
    /// φ·w̄·(L ⊗ I₂) with L the pursuer–target star Laplacian: rewards
    /// closing every ‖U_i − T‖.
    Laplacian,
    /// φ·I on positions relative to the start point.
    Identity,
}

/// Terminal matrix P_f used for planning over M pursuers plus the target.
pub fn planning_terminal_matrix(m: usize, phi: f64, fw: &FrozenWeights, mode: TerminalMode) -> DMatrix<f64> {
    let n = 2 * (m + 1);
    match mode {
        TerminalMode::Identity => DMatrix::identity(n, n) * phi,
        TerminalMode::Laplacian => {
            let scale = phi * fw.harmonic_mean();
            let mut l = DMatrix::zeros(n, n);
            for i in 0..m {
                for c in 0..2 {
                    let (pi, ti) = (2 * i + c, 2 * m + c);
                    l[(pi, pi)] += 1.0;
                    l[(ti, ti)] += 1.0;
                    l[(pi, ti)] -= 1.0;
                    l[(ti, pi)] -= 1.0;
                }
            }
            l * scale
        }
    }
}

/// Frozen-weight linear-quadratic game on a fixed horizon, used to check
/// the saddle property numerically.
///
/// J(p, q) = ∫ ½(pᵀRp − S‖q‖²) dt + ½ s_fᵀ P_f s_f.
#[derive(Debug, Clone)]
pub struct FrozenGame {
    pub matrices: LinearGameMatrices,
    pub weights: FrozenWeights,
    pub terminal: DMatrix<f64>,
    pub horizon: f64,
}

impl FrozenGame {
    /// Riccati solution on a grid of half the forward step, so every RK4
    /// stage of [`FrozenGame::payoff`] lands on a stored point.
    pub fn solve(&self, forward_step: f64) -> Result<RiccatiSolution> {
        solve_riccati(&self.terminal, 0.0, self.horizon, &self.weights, &self.matrices, forward_step / 2.0)
    }

    /// V(s0) = ½ s0ᵀ P(0) s0.
    pub fn value(&self, s0: &DVector<f64>, sol: &RiccatiSolution) -> f64 {
        0.5 * s0.dot(&(sol.initial() * s0))
    }

    /// Payoff of the feedback pair (p*(s) + δp, q*(s) + δq) where the
    /// offsets are piecewise constant over unit slots.
    pub fn payoff(
        &self,
        s0: &DVector<f64>,
        sol: &RiccatiSolution,
        dp: &dyn Fn(usize) -> DVector<f64>,
        dq: &dyn Fn(usize) -> DVector<f64>,
    ) -> Result<f64> {
        let half = sol.step();
        let n_grid = sol.p.len() - 1;
        if n_grid % 2 != 0 || half <= 0.0 {
            return Err(domain("solution grid must have an even number of steps"));
        }
        let h = 2.0 * half;
        let r_inv = self.weights.r_inverse(self.matrices.pursuer_control_dim);
        let r = DMatrix::from_diagonal(&r_inv.diagonal().map(|x| 1.0 / x));
        let s_w = self.weights.target;
        let g12 = &self.matrices.g12;
        let g21 = &self.matrices.g21;
        // Returns (ṡ, running cost rate).
        let rhs = |s: &DVector<f64>, pm: &DMatrix<f64>, slot: usize| -> (DVector<f64>, f64) {
            let grad = pm * s;
            let p = -&r_inv * g12.tr_mul(&grad) + dp(slot);
            let q = g21.tr_mul(&grad) / s_w + dq(slot);
            let sd = self.matrices.state_derivative(s, &p, &q);
            let cost = 0.5 * (p.dot(&(&r * &p)) - s_w * q.norm_squared());
            (sd, cost)
        };
        let mut s = s0.clone();
        let mut j = 0.0;
        for k in 0..n_grid / 2 {
            let t = k as f64 * h;
            let slot = (t + 1e-9).floor() as usize;
            let (p0, pm, p1) = (sol.forward(2 * k), sol.forward(2 * k + 1), sol.forward(2 * k + 2));
            let (k1, c1) = rhs(&s, p0, slot);
            let (k2, c2) = rhs(&(&s + &k1 * (h / 2.0)), pm, slot);
            let (k3, c3) = rhs(&(&s + &k2 * (h / 2.0)), pm, slot);
            let (k4, c4) = rhs(&(&s + &k3 * h), p1, slot);
            s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            j += (c1 + 2.0 * c2 + 2.0 * c3 + c4) * (h / 6.0);
        }
        Ok(j + 0.5 * s.dot(&(&self.terminal * &s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaderMode {
    Flee,
    Analytic,
}

/// Settings of the receding-horizon planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Penalty weights used inside the Riccati solve.
    pub weights: PayoffWeights,
    pub planning_horizon: usize,
    pub riccati_step: f64,
    pub terminal_mode: TerminalMode,
    pub evader: EvaderMode,
    /// Gain on the teammate-repulsion term added to p* before rate limiting.
    /// The feedback law itself only slows pursuers near a teammate (through
    /// W_i); it never steers them apart.
    #[serde(default = "default_separation_gain")]
    pub separation_gain: f64,
}

fn default_separation_gain() -> f64 {
    10.0
}

/// −gain·∇_{U_i} g_i^d: pushes pursuer i away from teammates, growing
/// without bound as a gap approaches the safety radius.
pub fn separation_velocity(state: &GameState, i: usize, safety_radius: f64, exponent: f64, gain: f64) -> Vector2<f64> {
    let ui = state.pursuers[i];
    let mut out = Vector2::zeros();
    for (j, uj) in state.pursuers.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = ui - uj;
        let gap = (d.norm_squared() - safety_radius * safety_radius).max(1e-9);
        out += d * (2.0 * exponent * gap.powf(-exponent - 1.0));
    }
    out * gain
}

/// Per-slot solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotDiagnostics {
    pub slot: usize,
    pub gain_norm: f64,
    /// H(s, p*, q*, Ps) + ½ sᵀṖs, zero for an exact Riccati solution.
    pub hamiltonian_residual: f64,
    pub riccati_asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopEpisode {
    pub log: EpisodeLog,
    pub trajectory: Trajectory,
    pub outcome: EpisodeOutcome,
    pub diagnostics: Vec<SlotDiagnostics>,
}

/// Runs one zero-delay episode under SDRE feedback. Every slot the weights
/// are frozen at the current state, the Riccati equation is re-solved over
/// the remaining planning window and the resulting planar velocity commands
/// are rate-limited into admissible controls.
pub fn closed_loop_episode<R: Rng + ?Sized>(
    world: &mut World,
    planner: &PlannerConfig,
    game_weights: &PayoffWeights,
    rng: &mut R,
) -> Result<ClosedLoopEpisode> {
    let m = world.num_pursuers();
    let term = world.params.termination;
    let matrices = LinearGameMatrices::planar(m);
    let phi = 1.0 / term.capture_value;
    let origin = world.origin;
    let mut log = EpisodeLog::start(world);
    let mut steps = Vec::new();
    let mut diagnostics = Vec::new();

    let outcome = loop {
        let state = world.state();
        if let Termination::Ended(kind) = check_termination(&state, &term) {
            break kind;
        }
        let s = relative_state(&state, origin);
        let fw = FrozenWeights::at(&state, &planner.weights, term.safety_radius)?;
        let remaining = term.horizon - state.slot;
        let window = remaining.min(planner.planning_horizon) as f64 * world.params.dt;
        let pf = planning_terminal_matrix(m, phi, &fw, planner.terminal_mode);
        let sol = solve_riccati(&pf, 0.0, window, &fw, &matrices, planner.riccati_step)?;
        let p_now = sol.initial();
        let gains = feedback_gains(p_now, &fw, &matrices)?;
        let p_star = gains.stacked_k12() * &s;
        let q_star = &gains.k21 * &s;

        let pursuer_ctrls = world
            .pursuers
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let push = separation_velocity(&state, i, term.safety_radius, planner.weights.exponent_c, planner.separation_gain);
                velocity_command(v, Vector2::new(p_star[2 * i], p_star[2 * i + 1]) + push, &world.params)
            })
            .collect::<Result<Vec<_>>>()?;
        let target_ctrl = match planner.evader {
            EvaderMode::Flee => evader_flee(world)?,
            EvaderMode::Analytic => evader_towards(world, Vector2::new(q_star[0], q_star[1]))?,
        };

        let grad = p_now * &s;
        let h = hamiltonian(&state, &p_star, &q_star, &grad, &planner.weights, term.safety_radius, &matrices)?;
        let p_dot = riccati_rhs(p_now, &fw, &matrices)?;
        diagnostics.push(SlotDiagnostics {
            slot: state.slot,
            gain_norm: gains.pursuer_norm(),
            hamiltonian_residual: h + 0.5 * s.dot(&(p_dot * &s)),
            riccati_asymmetry: sol.max_asymmetry(),
        });

        let controls = world.step(&pursuer_ctrls, &target_ctrl, rng)?;
        let next = world.state();
        let ended = match check_termination(&next, &term) {
            Termination::Ended(kind) => Some(kind),
            Termination::Continue => None,
        };
        let reward = step_reward(&state, &controls, ended, game_weights, &term, world.params.dt)?;
        log.record(world, reward);
        steps.push(TrajectoryStep { state, controls });
    };

    let trajectory = Trajectory {
        steps,
        final_state: world.state(),
        outcome,
        origin,
        dt: world.params.dt,
    };
    let outcome = EpisodeOutcome::from_trajectory(&trajectory, game_weights, &term)?;
    Ok(ClosedLoopEpisode {
        log,
        trajectory,
        outcome,
        diagnostics,
    })
}

/// Flattened state with every position taken relative to `origin`.
pub fn relative_state(state: &GameState, origin: Vector2<f64>) -> DVector<f64> {
    state.translated(-origin).to_vector()
}

/// Shorthand used by callers that only care about the outcome kind.
pub fn outcome_kind(ep: &ClosedLoopEpisode) -> OutcomeKind {
    ep.outcome.kind
}
