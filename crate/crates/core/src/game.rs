//! Joint game state, penalty functions, payoff functionals and termination.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Positions of the M pursuers and the target at one slot.
///
/// The flattened ordering is `[U_1, …, U_M, T]`, two coordinates each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub pursuers: Vec<Vector2<f64>>,
    pub target: Vector2<f64>,
    pub slot: usize,
    pub elapsed: f64,
}

impl GameState {
    pub fn new(pursuers: Vec<Vector2<f64>>, target: Vector2<f64>, slot: usize, elapsed: f64) -> Result<Self> {
        if pursuers.is_empty() {
            return Err(domain("game state needs at least one pursuer"));
        }
        let finite = pursuers.iter().chain(std::iter::once(&target)).all(|p| p.iter().all(|c| c.is_finite()));
        if !finite {
            return Err(domain("positions must be finite"));
        }
        Ok(Self {
            pursuers,
            target,
            slot,
            elapsed,
        })
    }

    pub fn num_pursuers(&self) -> usize {
        self.pursuers.len()
    }

    /// Length of the flattened state vector, 2(M+1).
    pub fn dim(&self) -> usize {
        2 * (self.pursuers.len() + 1)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.pursuers.iter().chain(std::iter::once(&self.target)).flat_map(|p| [p.x, p.y]),
        )
    }

    pub fn from_vector(v: &DVector<f64>, slot: usize, elapsed: f64) -> Result<Self> {
        if v.len() < 4 || v.len() % 2 != 0 {
            return Err(domain(format!("state vector length {} is not 2(M+1) with M >= 1", v.len())));
        }
        let m = v.len() / 2 - 1;
        let pursuers = (0..m).map(|i| Vector2::new(v[2 * i], v[2 * i + 1])).collect();
        Self::new(pursuers, Vector2::new(v[2 * m], v[2 * m + 1]), slot, elapsed)
    }

    /// e_i = T − U_i for every pursuer.
    pub fn relative_vectors(&self) -> Vec<Vector2<f64>> {
        self.pursuers.iter().map(|u| self.target - u).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.relative_vectors().iter().map(|e| e.norm()).collect()
    }

    pub fn translated(&self, offset: Vector2<f64>) -> Self {
        Self {
            pursuers: self.pursuers.iter().map(|u| u + offset).collect(),
            target: self.target + offset,
            slot: self.slot,
            elapsed: self.elapsed,
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.pursuers.len() {
            return Err(domain(format!("pursuer index {i} out of range (M = {})", self.pursuers.len())));
        }
        Ok(())
    }
}

/// Weights of the collision-avoidance and cohesion penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffWeights {
    pub alpha_d: Vec<f64>,
    pub beta_c: Vec<f64>,
    pub exponent_c: f64,
}

impl PayoffWeights {
    pub fn uniform(m: usize, alpha_d: f64, beta_c: f64, exponent_c: f64) -> Self {
        Self {
            alpha_d: vec![alpha_d; m],
            beta_c: vec![beta_c; m],
            exponent_c,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.alpha_d.len() != m || self.beta_c.len() != m {
            return Err(domain(format!(
                "weights sized for {}/{} pursuers, state has {m}",
                self.alpha_d.len(),
                self.beta_c.len()
            )));
        }
        let positive = self.alpha_d.iter().chain(&self.beta_c).all(|&w| w > 0.0 && w.is_finite());
        if !positive || !(self.exponent_c > 0.0) {
            return Err(domain("payoff weights and exponent must be strictly positive"));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alpha_d: self.alpha_d.iter().map(|w| w * factor).collect(),
            beta_c: self.beta_c.iter().map(|w| w * factor).collect(),
            exponent_c: self.exponent_c,
        }
    }
}

/// Radii, terminal constants and horizon that end the game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminationConfig {
    pub safety_radius: f64,
    pub sense_radius: f64,
    pub attack_radius: f64,
    pub escape_value: f64,
    pub capture_value: f64,
    pub horizon: usize,
    /// Escape as soon as any single pursuer loses the target.
    pub strict_escape: bool,
}

impl TerminationConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 < self.safety_radius
            && self.safety_radius < self.attack_radius
            && self.attack_radius < self.sense_radius;
        if !ordered {
            return Err(Error::Config(format!(
                "radii must satisfy 0 < r ({}) < R2 ({}) < R1 ({})",
                self.safety_radius, self.attack_radius, self.sense_radius
            )));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least one slot".into()));
        }
        if self.escape_value == 0.0 || self.capture_value == 0.0 {
            return Err(Error::Config("escape and capture values must be non-zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Capture,
    Escape,
    Timeout,
}

impl OutcomeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeKind::Capture => "capture",
            OutcomeKind::Escape => "escape",
            OutcomeKind::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "capture" => Ok(OutcomeKind::Capture),
            "escape" => Ok(OutcomeKind::Escape),
            "timeout" => Ok(OutcomeKind::Timeout),
            _ => Err(Error::Format(format!("unknown outcome `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Continue,
    Ended(OutcomeKind),
}

/// Capture beats escape beats timeout when several conditions hold at once.
pub fn check_termination(state: &GameState, cfg: &TerminationConfig) -> Termination {
    let d = state.distances();
    if d.iter().any(|&x| x < cfg.attack_radius) {
        return Termination::Ended(OutcomeKind::Capture);
    }
    let escaped = if cfg.strict_escape {
        d.iter().any(|&x| x > cfg.sense_radius)
    } else {
        d.iter().all(|&x| x > cfg.sense_radius)
    };
    if escaped {
        return Termination::Ended(OutcomeKind::Escape);
    }
    if state.slot >= cfg.horizon {
        return Termination::Ended(OutcomeKind::Timeout);
    }
    Termination::Continue
}

/// Σ_{j≠i} (‖U_i − U_j‖² − r²)^(−c). Errors when any pair is inside r.
pub fn collision_penalty(state: &GameState, i: usize, r: f64, c: f64) -> Result<f64> {
    state.check_index(i)?;
    let ui = state.pursuers[i];
    let mut total = 0.0;
    for (j, uj) in state.pursuers.iter().enumerate() {
        if j == i {
            continue;
        }
        let gap = (ui - uj).norm_squared() - r * r;
        if gap <= 0.0 {
            return Err(Error::Singular(format!("pursuers {i} and {j} are within the safety radius {r}")));
        }
        total += gap.powf(-c);
    }
    Ok(total)
}

/// Σ_{j≠i} ‖U_i − U_j‖².
pub fn cohesion_penalty(state: &GameState, i: usize) -> Result<f64> {
    state.check_index(i)?;
    let ui = state.pursuers[i];
    Ok(state.pursuers.iter().map(|uj| (ui - uj).norm_squared()).sum())
}

/// α_i·g_i^d + β_i·g_i^c, the weight on pursuer i's control effort.
pub fn penalty_weight(state: &GameState, i: usize, weights: &PayoffWeights, r: f64) -> Result<f64> {
    weights.validate(state.num_pursuers())?;
    let gd = collision_penalty(state, i, r, weights.exponent_c)?;
    let gc = cohesion_penalty(state, i)?;
    Ok(weights.alpha_d[i] * gd + weights.beta_c[i] * gc)
}

/// ‖U_i − T‖⁻², the weight on the target's control effort for pursuer i.
pub fn target_weight(state: &GameState, i: usize) -> Result<f64> {
    state.check_index(i)?;
    let d2 = (state.target - state.pursuers[i]).norm_squared();
    if d2 == 0.0 {
        return Err(Error::Singular(format!("pursuer {i} coincides with the target")));
    }
    Ok(1.0 / d2)
}

/// Terminal weight φ_i for every pursuer of a finished game: 1/b after a
/// capture, 1/a after an escape. Errors when the state is still in play.
pub fn terminal_value(state: &GameState, cfg: &TerminationConfig) -> Result<Vec<f64>> {
    match check_termination(state, cfg) {
        Termination::Ended(kind) => Ok(terminal_value_for(kind, state.num_pursuers(), cfg)),
        Termination::Continue => Err(Error::Contract(format!(
            "terminal value requested at slot {} while the game is still running",
            state.slot
        ))),
    }
}

/// Terminal weights for a known outcome. A timeout uses the escape branch.
pub fn terminal_value_for(kind: OutcomeKind, m: usize, cfg: &TerminationConfig) -> Vec<f64> {
    let phi = match kind {
        OutcomeKind::Capture => 1.0 / cfg.capture_value,
        OutcomeKind::Escape | OutcomeKind::Timeout => 1.0 / cfg.escape_value,
    };
    vec![phi; m]
}

/// s_fᵀ s_f with every position taken relative to `origin`.
pub fn terminal_quadratic(state: &GameState, origin: Vector2<f64>) -> f64 {
    state
        .pursuers
        .iter()
        .chain(std::iter::once(&state.target))
        .map(|p| (p - origin).norm_squared())
        .sum()
}

/// Planar controls applied during one slot (commanded velocities, m/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub pursuers: Vec<Vector2<f64>>,
    pub target: Vector2<f64>,
}

impl Controls {
    pub fn zeros(m: usize) -> Self {
        Self {
            pursuers: vec![Vector2::zeros(); m],
            target: Vector2::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: GameState,
    pub controls: Controls,
}

/// A complete episode: the state at the start of each slot with the controls
/// applied during it, plus the final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_state: GameState,
    pub outcome: OutcomeKind,
    pub origin: Vector2<f64>,
    pub dt: f64,
}

/// One-slot running cost of the whole system:
/// ½ Σ_i [p_iᵀ(α g_d + β g_c)p_i − qᵀ‖U_i − T‖⁻² q]·dt.
pub fn step_integrand(
    state: &GameState,
    controls: &Controls,
    weights: &PayoffWeights,
    cfg: &TerminationConfig,
    dt: f64,
) -> Result<f64> {
    let m = state.num_pursuers();
    if controls.pursuers.len() != m {
        return Err(domain(format!("{} pursuer controls for {m} pursuers", controls.pursuers.len())));
    }
    let q2 = controls.target.norm_squared();
    let mut total = 0.0;
    for i in 0..m {
        let w = penalty_weight(state, i, weights, cfg.safety_radius)?;
        total += w * controls.pursuers[i].norm_squared() - q2 * target_weight(state, i)?;
    }
    Ok(0.5 * total * dt)
}

fn check_trajectory(traj: &Trajectory, i: usize) -> Result<()> {
    traj.final_state.check_index(i)?;
    if traj.steps.iter().any(|s| s.controls.pursuers.len() != traj.final_state.num_pursuers()) {
        return Err(domain("trajectory control dimensions do not match the pursuer count"));
    }
    Ok(())
}

/// P_i: running control cost of pursuer i minus its terminal term.
pub fn pursuer_payoff(traj: &Trajectory, i: usize, weights: &PayoffWeights, cfg: &TerminationConfig) -> Result<f64> {
    check_trajectory(traj, i)?;
    let mut running = 0.0;
    for step in &traj.steps {
        let w = penalty_weight(&step.state, i, weights, cfg.safety_radius)?;
        running += w * step.controls.pursuers[i].norm_squared();
    }
    let phi = terminal_value_for(traj.outcome, traj.final_state.num_pursuers(), cfg)[i];
    Ok(0.5 * running * traj.dt - phi * terminal_quadratic(&traj.final_state, traj.origin))
}

/// P_T^i: the target's control cost weighted by its inverse squared distance to pursuer i.
pub fn target_payoff(traj: &Trajectory, i: usize) -> Result<f64> {
    check_trajectory(traj, i)?;
    let mut running = 0.0;
    for step in &traj.steps {
        running += step.controls.target.norm_squared() * target_weight(&step.state, i)?;
    }
    Ok(0.5 * running * traj.dt)
}

/// P_E = Σ_i (P_i − P_T^i).
pub fn system_payoff(traj: &Trajectory, weights: &PayoffWeights, cfg: &TerminationConfig) -> Result<f64> {
    let m = traj.final_state.num_pursuers();
    let mut total = 0.0;
    for i in 0..m {
        total += pursuer_payoff(traj, i, weights, cfg)? - target_payoff(traj, i)?;
    }
    Ok(total)
}

/// Summary of a finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub kind: OutcomeKind,
    pub final_state: GameState,
    pub per_pursuer_payoff: Vec<f64>,
    pub system_payoff: f64,
}

impl EpisodeOutcome {
    /// Evaluates the payoffs of a trajectory. Singular penalties (a
    /// collision somewhere along the path) yield infinite payoffs.
    pub fn from_trajectory(traj: &Trajectory, weights: &PayoffWeights, cfg: &TerminationConfig) -> Result<Self> {
        let m = traj.final_state.num_pursuers();
        let mut per = Vec::with_capacity(m);
        let mut system = 0.0;
        for i in 0..m {
            let (p, t) = match (pursuer_payoff(traj, i, weights, cfg), target_payoff(traj, i)) {
                (Ok(p), Ok(t)) => (p, t),
                (Err(Error::Singular(_)), _) | (_, Err(Error::Singular(_))) => (f64::INFINITY, 0.0),
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            per.push(p);
            system += p - t;
        }
        Ok(Self {
            kind: traj.outcome,
            final_state: traj.final_state.clone(),
            per_pursuer_payoff: per,
            system_payoff: system,
        })
    }
}

/// Coefficients of the linear state equation ṡ = F_s s + G12 p + G21 q.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGameMatrices {
    pub f: DMatrix<f64>,
    pub g12: DMatrix<f64>,
    pub g21: DMatrix<f64>,
    /// Columns of G12 owned by each pursuer.
    pub pursuer_control_dim: usize,
}

impl LinearGameMatrices {
    pub fn new(f: DMatrix<f64>, g12: DMatrix<f64>, g21: DMatrix<f64>, pursuer_control_dim: usize) -> Result<Self> {
        let n = f.nrows();
        if f.ncols() != n || g12.nrows() != n || g21.nrows() != n {
            return Err(domain("F_s must be square and G12, G21 must have n_s rows"));
        }
        if pursuer_control_dim == 0 || g12.ncols() % pursuer_control_dim != 0 || g12.ncols() == 0 {
            return Err(domain("G12 columns must split evenly into pursuer control blocks"));
        }
        let finite = f.iter().chain(g12.iter()).chain(g21.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(domain("game matrices must be finite"));
        }
        Ok(Self {
            f,
            g12,
            g21,
            pursuer_control_dim,
        })
    }

    /// Planar instantiation: F_s = 0, each pursuer's commanded velocity
    /// drives its own position rows, the target's drives the last two.
    pub fn planar(m: usize) -> Self {
        let n = 2 * (m + 1);
        let mut g12 = DMatrix::zeros(n, 2 * m);
        for k in 0..2 * m {
            g12[(k, k)] = 1.0;
        }
        let mut g21 = DMatrix::zeros(n, 2);
        g21[(2 * m, 0)] = 1.0;
        g21[(2 * m + 1, 1)] = 1.0;
        Self {
            f: DMatrix::zeros(n, n),
            g12,
            g21,
            pursuer_control_dim: 2,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn num_pursuers(&self) -> usize {
        self.g12.ncols() / self.pursuer_control_dim
    }

    /// ṡ for the given state and stacked controls.
    pub fn state_derivative(&self, s: &DVector<f64>, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        &self.f * s + &self.g12 * p + &self.g21 * q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gs(pursuers: &[(f64, f64)], target: (f64, f64)) -> GameState {
        GameState::new(
            pursuers.iter().map(|&(x, y)| Vector2::new(x, y)).collect(),
            Vector2::new(target.0, target.1),
            0,
            0.0,
        )
        .unwrap()
    }

    fn table_cfg() -> TerminationConfig {
        TerminationConfig {
            safety_radius: 5.0,
            sense_radius: 80.0,
            attack_radius: 15.0,
            escape_value: -1.0,
            capture_value: 10.0,
            horizon: 1000,
            strict_escape: false,
        }
    }

    #[test]
    fn relative_vector_examples() {
        let s = gs(&[(0.0, 0.0)], (3.0, 4.0));
        assert_eq!(s.relative_vectors()[0], Vector2::new(3.0, 4.0));
        assert_eq!(s.distances()[0], 5.0);
        assert_eq!(gs(&[(2.0, 2.0)], (2.0, 2.0)).relative_vectors()[0], Vector2::zeros());
        let s = gs(&[(1.0, -2.0), (7.0, 3.0)], (-4.0, 9.0));
        assert_eq!(s.translated(Vector2::new(10.0, 10.0)).relative_vectors(), s.relative_vectors());
    }

    #[test]
    fn vector_roundtrip_preserves_order() {
        let s = gs(&[(1.0, 2.0), (3.0, 4.0)], (5.0, 6.0));
        let v = s.to_vector();
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(GameState::from_vector(&v, 0, 0.0).unwrap(), s);
    }

    #[test]
    fn collision_penalty_examples() {
        let s = gs(&[(0.0, 0.0), (5.0, 1.0)], (50.0, 0.0));
        assert_abs_diff_eq!(collision_penalty(&s, 0, 5.0, 0.5).unwrap(), 1.0, epsilon = 1e-12);
        let s = gs(&[(0.0, 0.0), (5.0, 2.0)], (50.0, 0.0));
        assert_abs_diff_eq!(collision_penalty(&s, 1, 5.0, 0.5).unwrap(), 0.5, epsilon = 1e-12);

        for offset in [1e-13, 1e-14] {
            let s = gs(&[(0.0, 0.0), ((25.0f64 + offset).sqrt(), 0.0)], (50.0, 0.0));
            assert!(collision_penalty(&s, 0, 5.0, 0.5).unwrap() > 1e6);
        }
        let s = gs(&[(0.0, 0.0), (4.0, 3.0)], (50.0, 0.0));
        assert!(matches!(collision_penalty(&s, 0, 5.0, 0.5), Err(Error::Singular(_))));
    }

    #[test]
    fn cohesion_penalty_examples() {
        let s = gs(&[(0.0, 0.0), (3.0, 4.0)], (50.0, 0.0));
        assert_eq!(cohesion_penalty(&s, 0).unwrap(), 25.0);
        assert_eq!(cohesion_penalty(&s, 1).unwrap(), 25.0);
        let s = gs(&[(1.0, 1.0); 3], (50.0, 0.0));
        assert_eq!(cohesion_penalty(&s, 2).unwrap(), 0.0);
        let l = 7.0;
        let h = l * 3f64.sqrt() / 2.0;
        let s = gs(&[(0.0, 0.0), (l, 0.0), (l / 2.0, h)], (50.0, 0.0));
        for i in 0..3 {
            assert_abs_diff_eq!(cohesion_penalty(&s, i).unwrap(), 2.0 * l * l, epsilon = 1e-12);
        }
    }

    #[test]
    fn terminal_value_examples() {
        let cfg = table_cfg();
        let escaped = gs(&[(0.0, 0.0), (0.0, 10.0)], (100.0, 0.0));
        assert_eq!(terminal_value(&escaped, &cfg).unwrap(), vec![-1.0, -1.0]);
        let caught = gs(&[(0.0, 0.0), (0.0, 10.0)], (10.0, 0.0));
        assert_eq!(terminal_value(&caught, &cfg).unwrap(), vec![0.1, 0.1]);
        let unit = TerminationConfig { escape_value: 1.0, ..cfg };
        assert_eq!(terminal_value(&escaped, &unit).unwrap(), vec![1.0, 1.0]);
        let running = gs(&[(0.0, 0.0), (0.0, 10.0)], (40.0, 0.0));
        assert!(matches!(terminal_value(&running, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn termination_examples() {
        let cfg = table_cfg();
        let at = |d: &[f64]| {
            gs(
                &d.iter().enumerate().map(|(k, &r)| {
                    let a = k as f64 * 2.0;
                    (-r * a.cos(), -r * a.sin())
                }).collect::<Vec<_>>(),
                (0.0, 0.0),
            )
        };
        assert_eq!(check_termination(&at(&[14.0, 30.0, 50.0]), &cfg), Termination::Ended(OutcomeKind::Capture));
        assert_eq!(check_termination(&at(&[81.0, 81.0, 81.0]), &cfg), Termination::Ended(OutcomeKind::Escape));
        assert_eq!(check_termination(&at(&[40.0, 40.0, 40.0]), &cfg), Termination::Continue);

        let mut late = at(&[40.0, 40.0, 40.0]);
        late.slot = 1000;
        assert_eq!(check_termination(&late, &cfg), Termination::Ended(OutcomeKind::Timeout));

        let straggler = at(&[40.0, 81.0, 40.0]);
        assert_eq!(check_termination(&straggler, &cfg), Termination::Continue);
        let strict = TerminationConfig { strict_escape: true, ..cfg };
        assert_eq!(check_termination(&straggler, &strict), Termination::Ended(OutcomeKind::Escape));
        // Capture wins over escape when both trip.
        assert_eq!(check_termination(&at(&[10.0, 81.0, 90.0]), &strict), Termination::Ended(OutcomeKind::Capture));
    }

    fn single_slot(p: Vector2<f64>, q: Vector2<f64>, pursuers: &[(f64, f64)], target: (f64, f64)) -> Trajectory {
        let state = gs(pursuers, target);
        let mut controls = Controls::zeros(pursuers.len());
        controls.pursuers[0] = p;
        controls.target = q;
        Trajectory {
            steps: vec![TrajectoryStep { state: state.clone(), controls }],
            final_state: state,
            outcome: OutcomeKind::Capture,
            origin: Vector2::zeros(),
            dt: 1.0,
        }
    }

    #[test]
    fn pursuer_payoff_examples() {
        let cfg = TerminationConfig { capture_value: f64::INFINITY, ..table_cfg() };
        // Two pursuers with ‖ΔU‖² = 26: g_d = 1, g_c = 26; α g_d + β g_c = 1 with β = 0.
        let w = PayoffWeights { alpha_d: vec![1.0, 1.0], beta_c: vec![1e-300, 1e-300], exponent_c: 0.5 };
        let traj = single_slot(Vector2::new(0.0, 2.0), Vector2::zeros(), &[(0.0, 0.0), (5.0, 1.0)], (40.0, 0.0));
        assert_abs_diff_eq!(pursuer_payoff(&traj, 0, &w, &cfg).unwrap(), 2.0, epsilon = 1e-12);

        let zero = single_slot(Vector2::zeros(), Vector2::zeros(), &[(0.0, 0.0), (5.0, 1.0)], (40.0, 0.0));
        assert_eq!(pursuer_payoff(&zero, 0, &w, &cfg).unwrap(), 0.0);

        let w1 = PayoffWeights::uniform(2, 0.3, 0.02, 0.5);
        let a = pursuer_payoff(&traj, 0, &w1, &cfg).unwrap();
        let b = pursuer_payoff(&traj, 0, &w1.scaled(2.0), &cfg).unwrap();
        assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-12);
    }

    #[test]
    fn target_payoff_examples() {
        let near = single_slot(Vector2::zeros(), Vector2::new(1.0, 0.0), &[(0.0, 0.0)], (1.0, 0.0));
        assert_abs_diff_eq!(target_payoff(&near, 0).unwrap(), 0.5, epsilon = 1e-15);
        let far = single_slot(Vector2::zeros(), Vector2::new(1.0, 0.0), &[(0.0, 0.0)], (2.0, 0.0));
        assert_abs_diff_eq!(target_payoff(&far, 0).unwrap(), 0.125, epsilon = 1e-15);
        let still = single_slot(Vector2::zeros(), Vector2::zeros(), &[(0.0, 0.0)], (2.0, 0.0));
        assert_eq!(target_payoff(&still, 0).unwrap(), 0.0);
        let on_top = single_slot(Vector2::zeros(), Vector2::new(1.0, 0.0), &[(2.0, 0.0)], (2.0, 0.0));
        assert!(matches!(target_payoff(&on_top, 0), Err(Error::Singular(_))));
    }

    #[test]
    fn system_payoff_single_pursuer_and_zero_controls() {
        let cfg = table_cfg();
        let w = PayoffWeights::uniform(1, 1.0, 1.0, 0.5);
        let mut traj = single_slot(Vector2::new(0.4, 0.1), Vector2::new(0.2, 0.2), &[(0.0, 0.0)], (12.0, 0.0));
        let expected = pursuer_payoff(&traj, 0, &w, &cfg).unwrap() - target_payoff(&traj, 0).unwrap();
        assert_abs_diff_eq!(system_payoff(&traj, &w, &cfg).unwrap(), expected, epsilon = 1e-15);

        traj.steps[0].controls = Controls::zeros(1);
        traj.origin = traj.final_state.target;
        traj.final_state.pursuers[0] = traj.final_state.target;
        traj.final_state.pursuers[0].x += 1e-3;
        let cfg_inf = TerminationConfig { capture_value: f64::INFINITY, ..cfg };
        assert_eq!(system_payoff(&traj, &w, &cfg_inf).unwrap(), 0.0);
    }

    #[test]
    fn step_integrand_sign_flips() {
        let cfg = table_cfg();
        let w = PayoffWeights::uniform(2, 1e-3, 1e-6, 0.5);
        let s = gs(&[(0.0, 0.0), (0.0, 10.0)], (20.0, 0.0));
        let mut c = Controls::zeros(2);
        assert_eq!(step_integrand(&s, &c, &w, &cfg, 1.0).unwrap(), 0.0);
        c.target = Vector2::new(1.0, 0.0);
        assert!(step_integrand(&s, &c, &w, &cfg, 1.0).unwrap() < 0.0);
        c.pursuers = vec![Vector2::new(50.0, 0.0); 2];
        assert!(step_integrand(&s, &c, &w, &cfg, 1.0).unwrap() > 0.0);
    }

    /// Independent slot-by-slot evaluation written directly from the payoff
    /// definitions, without the library helpers.
    fn brute_force_system_payoff(traj: &Trajectory, alpha: &[f64], beta: &[f64], c: f64, cfg: &TerminationConfig) -> f64 {
        let m = traj.final_state.pursuers.len();
        let mut total = 0.0;
        for i in 0..m {
            let mut run_p = 0.0;
            let mut run_t = 0.0;
            for step in &traj.steps {
                let u = &step.state.pursuers;
                let mut gd = 0.0;
                let mut gc = 0.0;
                for j in 0..m {
                    if j != i {
                        let dx = u[i].x - u[j].x;
                        let dy = u[i].y - u[j].y;
                        let d2 = dx * dx + dy * dy;
                        gd += (d2 - cfg.safety_radius * cfg.safety_radius).powf(-c);
                        gc += d2;
                    }
                }
                let p = step.controls.pursuers[i];
                run_p += (alpha[i] * gd + beta[i] * gc) * (p.x * p.x + p.y * p.y) * traj.dt;
                let tx = step.state.target.x - u[i].x;
                let ty = step.state.target.y - u[i].y;
                let q = step.controls.target;
                run_t += (q.x * q.x + q.y * q.y) / (tx * tx + ty * ty) * traj.dt;
            }
            let phi = match traj.outcome {
                OutcomeKind::Capture => 1.0 / cfg.capture_value,
                _ => 1.0 / cfg.escape_value,
            };
            let mut sf = 0.0;
            for p in traj.final_state.pursuers.iter().chain(std::iter::once(&traj.final_state.target)) {
                sf += (p.x - traj.origin.x).powi(2) + (p.y - traj.origin.y).powi(2);
            }
            total += 0.5 * run_p - phi * sf - 0.5 * run_t;
        }
        total
    }

    fn random_trajectory(rng: &mut ChaCha8Rng, m: usize, slots: usize) -> Trajectory {
        let mut steps = Vec::new();
        let base: Vec<Vector2<f64>> = (0..m).map(|k| Vector2::new(20.0 * k as f64, 0.0)).collect();
        for k in 0..slots {
            let pursuers = base.iter().map(|b| b + Vector2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect();
            let state = GameState::new(pursuers, Vector2::new(rng.gen_range(-5.0..5.0), 40.0), k, k as f64).unwrap();
            let controls = Controls {
                pursuers: (0..m).map(|_| Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect(),
                target: Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            };
            steps.push(TrajectoryStep { state, controls });
        }
        let final_state = GameState::new(base.clone(), Vector2::new(0.0, 10.0), slots, slots as f64).unwrap();
        Trajectory {
            steps,
            final_state,
            outcome: if rng.gen_bool(0.5) { OutcomeKind::Capture } else { OutcomeKind::Escape },
            origin: Vector2::new(rng.gen_range(-10.0..10.0), 3.0),
            dt: 1.0,
        }
    }

    #[test]
    fn system_payoff_matches_brute_force() {
        let cfg = table_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let traj = random_trajectory(&mut rng, 3, 5);
            let alpha: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..2.0)).collect();
            let beta: Vec<f64> = (0..3).map(|_| rng.gen_range(0.001..0.1)).collect();
            let w = PayoffWeights { alpha_d: alpha.clone(), beta_c: beta.clone(), exponent_c: 0.5 };
            let lib = system_payoff(&traj, &w, &cfg).unwrap();
            let oracle = brute_force_system_payoff(&traj, &alpha, &beta, 0.5, &cfg);
            assert!((lib - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()), "{lib} vs {oracle}");
        }

        let traj = random_trajectory(&mut rng, 2, 2);
        let w = PayoffWeights::uniform(2, 0.7, 0.05, 0.5);
        let oracle = brute_force_system_payoff(&traj, &[0.7, 0.7], &[0.05, 0.05], 0.5, &cfg);
        assert_abs_diff_eq!(system_payoff(&traj, &w, &cfg).unwrap(), oracle, epsilon = 1e-9);
    }

    #[test]
    fn step_integrand_telescopes_to_running_payoff() {
        let cfg = table_cfg();
        let w = PayoffWeights::uniform(3, 0.4, 0.02, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let traj = random_trajectory(&mut rng, 3, 5);
            let summed: f64 = traj.steps.iter().map(|s| step_integrand(&s.state, &s.controls, &w, &cfg, traj.dt).unwrap()).sum();
            let phi = terminal_value_for(traj.outcome, 3, &cfg)[0];
            let running = system_payoff(&traj, &w, &cfg).unwrap() + 3.0 * phi * terminal_quadratic(&traj.final_state, traj.origin);
            assert!((summed - running).abs() <= 1e-9 * (1.0 + running.abs()));
        }
    }

    #[test]
    fn planar_matrices_shape() {
        let g = LinearGameMatrices::planar(3);
        assert_eq!((g.f.nrows(), g.g12.ncols(), g.g21.ncols()), (8, 6, 2));
        assert_eq!(g.num_pursuers(), 3);
        let s = DVector::from_element(8, 1.0);
        let p = DVector::from_fn(6, |k, _| k as f64);
        let q = DVector::from_vec(vec![10.0, 20.0]);
        let sd = g.state_derivative(&s, &p, &q);
        assert_eq!(sd.as_slice(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 20.0]);
    }

    proptest::proptest! {
        #[test]
        fn penalties_invariant_under_translation_and_relabeling(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..6),
            dx in -100.0f64..100.0, dy in -100.0f64..100.0,
        ) {
            let s = gs(&pts, (0.0, 0.0));
            let t = s.translated(Vector2::new(dx, dy));
            let m = pts.len();
            let mut swapped = pts.clone();
            swapped.swap(0, 1);
            let sw = gs(&swapped, (0.0, 0.0));
            let mut pair_sum = 0.0;
            for i in 0..m {
                for j in i + 1..m {
                    pair_sum += (s.pursuers[i] - s.pursuers[j]).norm_squared();
                }
            }
            let mut total = 0.0;
            for i in 0..m {
                let gc = cohesion_penalty(&s, i).unwrap();
                total += gc;
                proptest::prop_assert!((gc - cohesion_penalty(&t, i).unwrap()).abs() <= 1e-9 * (1.0 + gc));
                if let Ok(gd) = collision_penalty(&s, i, 0.5, 0.5) {
                    let gdt = collision_penalty(&t, i, 0.5, 0.5).unwrap();
                    proptest::prop_assert!((gd - gdt).abs() <= 1e-6 * (1.0 + gd));
                }
            }
            proptest::prop_assert!((total - 2.0 * pair_sum).abs() <= 1e-9 * (1.0 + total));
            let relabel = |i: usize| match i { 0 => 1, 1 => 0, k => k };
            for i in 0..m {
                proptest::prop_assert_eq!(cohesion_penalty(&s, i).unwrap(), cohesion_penalty(&sw, relabel(i)).unwrap());
            }
        }
    }
}
