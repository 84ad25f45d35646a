//! Experiment orchestration: simulate, train, eval and analyze, with CSV
//! outputs and a run manifest.
//!
//! All files are written from the calling thread, one after another, so the
//! byte content of every CSV depends only on the config and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::analytic::{closed_loop_episode, SlotDiagnostics};
use crate::checkpoint::{self, RngState};
use crate::config::{place_initial, rng_stream, ScenarioConfig, Stream};
use crate::dqn::{run_episode, Agent, EpisodeOptions, EpisodeReport, EpisodeRngs, PolicyMode};
use crate::env::EpisodeLog;
use crate::error::{Error, Result};
use crate::game::{EpisodeOutcome, OutcomeKind};
use crate::metrics::{smooth_curve, windowed_consistency};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Train,
    Eval,
    Analyze,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Analyze => "analyze",
        }
    }
}

/// Inputs that are not part of the scenario itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Trained agent for `eval`; `train` resumes from it when given.
    pub checkpoint: Option<PathBuf>,
    /// Training log consumed by `analyze` (defaults to `<out>/training_log.csv`).
    pub input: Option<PathBuf>,
    /// Also write per-slot solver diagnostics during `simulate`.
    pub verbose: bool,
    /// Evaluate uniform random actions instead of the checkpoint.
    pub random_policy: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub outputs: Vec<String>,
}

/// Manifest file name for a command, e.g. `train_manifest.json`.
pub fn manifest_name(command: Command) -> String {
    format!("{}_manifest.json", command.as_str())
}
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const OUTCOMES: &str = "outcomes.csv";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const EVAL_OUTCOMES: &str = "eval_outcomes.csv";
pub const CONSISTENCY: &str = "consistency.csv";
pub const REWARD_CURVE: &str = "reward_curve.csv";

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(manifest_name(m.command)), text + "\n")?;
    Ok(())
}

/// Comma-separated text with a header row and LF line endings.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[String]) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn into_bytes(self) -> Result<Vec<u8>> {
        self.writer.into_inner().map_err(|e| Error::from(e.into_error()))
    }
}

fn strs(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Trajectory table: one row per agent per recorded slot; the target is
/// agent M. Slot 0 is the initial configuration with zero reward.
pub fn trajectory_table() -> Result<Table> {
    Table::new(&strs(&["episode", "slot", "agent_id", "x", "y", "heading", "speed", "reward_step", "terminated_flag"]))
}

pub fn append_trajectory(table: &mut Table, episode: usize, log: &EpisodeLog) -> Result<()> {
    let last = log.snapshots.len().saturating_sub(1);
    for (slot, agents) in log.snapshots.iter().enumerate() {
        let reward = if slot == 0 { 0.0 } else { log.rewards[slot - 1] };
        let flag = u8::from(slot == last);
        for (id, a) in agents.iter().enumerate() {
            table.row(&[
                episode.to_string(),
                slot.to_string(),
                id.to_string(),
                a.x.to_string(),
                a.y.to_string(),
                a.heading.to_string(),
                a.speed.to_string(),
                reward.to_string(),
                flag.to_string(),
            ])?;
        }
    }
    Ok(())
}

fn payoff_header(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("payoff_{i}")).collect()
}

fn outcome_table(m: usize, with_reward: bool) -> Result<Table> {
    let mut h = strs(&["episode", "outcome", "steps"]);
    if with_reward {
        h.push("total_reward".into());
    }
    h.push("system_payoff".into());
    h.extend(payoff_header(m));
    Table::new(&h)
}

fn outcome_row(episode: usize, steps: usize, reward: Option<f64>, o: &EpisodeOutcome) -> Vec<String> {
    let mut r = vec![episode.to_string(), o.kind.as_str().to_string(), steps.to_string()];
    if let Some(x) = reward {
        r.push(x.to_string());
    }
    r.push(o.system_payoff.to_string());
    r.extend(o.per_pursuer_payoff.iter().map(f64::to_string));
    r
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub episode: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub outcome: OutcomeKind,
    pub epsilon: f64,
    pub loss_mean: Option<f64>,
    pub delay_mean_slots: f64,
    pub payoffs: Vec<f64>,
}

impl TrainRow {
    pub fn header(m: usize) -> Vec<String> {
        let mut h = strs(&[
            "episode",
            "total_reward",
            "steps",
            "outcome",
            "epsilon",
            "loss_mean",
            "delay_mean_slots",
        ]);
        h.extend(payoff_header(m));
        h
    }

    pub fn to_record(&self) -> Vec<String> {
        let mut r = vec![
            self.episode.to_string(),
            self.total_reward.to_string(),
            self.steps.to_string(),
            self.outcome.as_str().to_string(),
            self.epsilon.to_string(),
            self.loss_mean.map_or(String::new(), |l| l.to_string()),
            self.delay_mean_slots.to_string(),
        ];
        r.extend(self.payoffs.iter().map(f64::to_string));
        r
    }

    fn from_record(rec: &csv::StringRecord, m: usize) -> Result<Self> {
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Format(format!("training log row has no column {k}")));
        let num = |k: usize| -> Result<f64> {
            field(k)?.parse().map_err(|_| Error::Format(format!("column {k}: not a number: {:?}", rec.get(k))))
        };
        let int = |k: usize| -> Result<usize> {
            field(k)?.parse().map_err(|_| Error::Format(format!("column {k}: not an integer: {:?}", rec.get(k))))
        };
        let loss = field(5)?;
        Ok(Self {
            episode: int(0)?,
            total_reward: num(1)?,
            steps: int(2)?,
            outcome: OutcomeKind::parse(field(3)?)?,
            epsilon: num(4)?,
            loss_mean: if loss.is_empty() { None } else { Some(num(5)?) },
            delay_mean_slots: num(6)?,
            payoffs: (0..m).map(|i| num(7 + i)).collect::<Result<_>>()?,
        })
    }
}

/// Parses a training log written by [`train`].
pub fn read_training_log(path: &Path) -> Result<Vec<TrainRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let m = header.iter().filter(|h| h.starts_with("payoff_")).count();
    if header.iter().take(7).collect::<Vec<_>>() != TrainRow::header(0).iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Format(format!("{}: unexpected training log header", path.display())));
    }
    rdr.records().map(|r| TrainRow::from_record(&r?, m)).collect()
}

/// Random streams for a run, advanced across episodes.
pub struct RunStreams {
    pub placement: rand_chacha::ChaCha8Rng,
    pub disturbance: rand_chacha::ChaCha8Rng,
    pub exploration: rand_chacha::ChaCha8Rng,
    pub replay: rand_chacha::ChaCha8Rng,
}

impl RunStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            placement: rng_stream(seed, Stream::Placement),
            disturbance: rng_stream(seed, Stream::Disturbance),
            exploration: rng_stream(seed, Stream::Exploration),
            replay: rng_stream(seed, Stream::Replay),
        }
    }

    pub fn states(&self) -> Vec<(String, RngState)> {
        vec![
            ("placement".into(), RngState::capture(&self.placement)),
            ("disturbance".into(), RngState::capture(&self.disturbance)),
            ("exploration".into(), RngState::capture(&self.exploration)),
            ("replay".into(), RngState::capture(&self.replay)),
        ]
    }
}

/// One episode of the DQN loop on a freshly placed world.
pub fn dqn_episode(
    cfg: &ScenarioConfig,
    agent: &mut Agent,
    streams: &mut RunStreams,
    policy: PolicyMode,
    train: bool,
) -> Result<EpisodeReport> {
    let mut world = place_initial(cfg, &mut streams.placement)?;
    let opts = EpisodeOptions {
        delay: cfg.delay_model()?,
        policy,
        train,
        buffer_slots: cfg.acoustics.buffer_slots,
    };
    run_episode(
        &mut world,
        agent,
        &opts,
        &cfg.game_weights(),
        EpisodeRngs {
            disturbance: &mut streams.disturbance,
            exploration: &mut streams.exploration,
            replay: &mut streams.replay,
        },
    )
}

/// Runs `cfg.dqn.episodes` training episodes, calling `on_row` after each.
pub fn train(
    cfg: &ScenarioConfig,
    agent: &mut Agent,
    streams: &mut RunStreams,
    mut on_row: impl FnMut(&TrainRow, &EpisodeReport) -> Result<()>,
) -> Result<Vec<TrainRow>> {
    let mut rows = Vec::with_capacity(cfg.dqn.episodes);
    for episode in 0..cfg.dqn.episodes {
        let epsilon = cfg.dqn.greedy_probability(episode);
        let rep = dqn_episode(cfg, agent, streams, PolicyMode::Learned { greedy_prob: epsilon }, true)?;
        let row = TrainRow {
            episode,
            total_reward: rep.total_reward,
            steps: rep.steps,
            outcome: rep.outcome.kind,
            epsilon,
            loss_mean: rep.loss_mean,
            delay_mean_slots: rep.delay_mean_slots,
            payoffs: rep.outcome.per_pursuer_payoff.clone(),
        };
        on_row(&row, &rep)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Frozen-policy rollouts: greedy on the agent's network, or uniform random.
pub fn evaluate(
    cfg: &ScenarioConfig,
    agent: &mut Agent,
    episodes: usize,
    random: bool,
    mut on_episode: impl FnMut(usize, &EpisodeReport) -> Result<()>,
) -> Result<Vec<OutcomeKind>> {
    let mut streams = RunStreams::new(cfg.seed);
    let policy = if random {
        PolicyMode::Random
    } else {
        PolicyMode::Learned { greedy_prob: 1.0 }
    };
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let rep = dqn_episode(cfg, agent, &mut streams, policy, false)?;
        on_episode(ep, &rep)?;
        out.push(rep.outcome.kind);
    }
    Ok(out)
}

/// Consistency table over sliding windows of the per-pursuer pay-offs.
pub fn consistency_csv(rows: &[TrainRow], cfg: &ScenarioConfig) -> Result<Vec<u8>> {
    let m = rows.first().map_or(cfg.system.num_pursuers, |r| r.payoffs.len());
    let series: Vec<Vec<f64>> = (0..m).map(|i| rows.iter().map(|r| r.payoffs[i]).collect()).collect();
    let mut header = strs(&["episode_window_end", "kappa"]);
    for i in 0..m {
        for j in i + 1..m {
            header.push(format!("kappa_pair_{i}_{j}"));
        }
    }
    let mut t = Table::new(&header)?;
    let window = cfg.analysis.consistency_window;
    if rows.len() >= window {
        for (end, c) in windowed_consistency(&series, window, cfg.analysis.consistency_divisor)? {
            let mut r = vec![end.to_string(), c.kappa.to_string()];
            r.extend(c.pairs.iter().map(|(_, k)| k.to_string()));
            t.row(&r)?;
        }
    }
    t.into_bytes()
}

/// Raw and smoothed per-episode reward and capture indicator.
pub fn reward_curve_csv(rows: &[TrainRow], cfg: &ScenarioConfig) -> Result<Vec<u8>> {
    let w = cfg.analysis.smoothing_window;
    let rewards: Vec<f64> = rows.iter().map(|r| r.total_reward).collect();
    let captures: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.outcome == OutcomeKind::Capture))).collect();
    let sr = smooth_curve(&rewards, w)?;
    let sc = smooth_curve(&captures, w)?;
    let mut t = Table::new(&strs(&["episode", "total_reward", "smoothed_reward", "capture", "smoothed_capture_rate"]))?;
    for (k, r) in rows.iter().enumerate() {
        t.row(&[
            r.episode.to_string(),
            rewards[k].to_string(),
            sr[k].to_string(),
            captures[k].to_string(),
            sc[k].to_string(),
        ])?;
    }
    t.into_bytes()
}

fn diagnostics_rows(t: &mut Table, episode: usize, d: &[SlotDiagnostics]) -> Result<()> {
    for s in d {
        t.row(&[
            episode.to_string(),
            s.slot.to_string(),
            s.gain_norm.to_string(),
            s.hamiltonian_residual.to_string(),
            s.riccati_asymmetry.to_string(),
        ])?;
    }
    Ok(())
}

struct Outputs<'a> {
    dir: &'a Path,
    manifest: RunManifest,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.manifest.outputs.push(name.to_string());
        write_manifest(self.dir, &self.manifest)
    }

    fn cleanup(&self) {
        for name in &self.manifest.outputs {
            let _ = fs::remove_file(self.dir.join(name));
        }
        let _ = fs::remove_file(self.dir.join(manifest_name(self.manifest.command)));
    }
}

/// Runs one command into `out_dir`. The manifest is written first and
/// finalised last; on failure every file of this run is removed again.
pub fn run(command: Command, cfg: &ScenarioConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut out = Outputs {
        dir: out_dir,
        manifest: RunManifest {
            command,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: None,
            outputs: Vec::new(),
        },
    };
    let result = write_manifest(out_dir, &out.manifest).and_then(|()| execute(command, cfg, opts, &mut out));
    match result {
        Ok(()) => {
            out.manifest.finished_at = Some(now());
            write_manifest(out_dir, &out.manifest)?;
            Ok(out.manifest)
        }
        Err(e) => {
            out.cleanup();
            Err(e)
        }
    }
}

fn execute(command: Command, cfg: &ScenarioConfig, opts: &RunOptions, out: &mut Outputs<'_>) -> Result<()> {
    let m = cfg.system.num_pursuers;
    match command {
        Command::Simulate => {
            let mut traj = trajectory_table()?;
            let mut outcomes = outcome_table(m, true)?;
            let mut diag = Table::new(&strs(&["episode", "slot", "gain_norm", "hamiltonian_residual", "riccati_asymmetry"]))?;
            let mut streams = RunStreams::new(cfg.seed);
            let planner = cfg.planner();
            for ep in 0..cfg.solver.episodes {
                let mut world = place_initial(cfg, &mut streams.placement)?;
                let run = closed_loop_episode(&mut world, &planner, &cfg.game_weights(), &mut streams.disturbance)?;
                append_trajectory(&mut traj, ep, &run.log)?;
                let total: f64 = run.log.rewards.iter().sum();
                outcomes.row(&outcome_row(ep, run.log.steps(), Some(total), &run.outcome))?;
                diagnostics_rows(&mut diag, ep, &run.diagnostics)?;
            }
            out.write(TRAJECTORIES, &traj.into_bytes()?)?;
            out.write(OUTCOMES, &outcomes.into_bytes()?)?;
            if opts.verbose {
                out.write(DIAGNOSTICS, &diag.into_bytes()?)?;
            }
        }
        Command::Train => {
            let mut agent = match &opts.checkpoint {
                Some(p) => checkpoint::load(p)?.agent,
                None => cfg.new_agent()?,
            };
            let mut streams = RunStreams::new(cfg.seed);
            let mut log = Table::new(&TrainRow::header(m))?;
            train(cfg, &mut agent, &mut streams, |row, _| log.row(&row.to_record()))?;
            out.write(TRAINING_LOG, &log.into_bytes()?)?;
            out.write(
                CHECKPOINT,
                &checkpoint::encode(&agent, cfg.dqn.episodes, &streams.states())?,
            )?;
        }
        Command::Eval => {
            let mut agent = match (&opts.checkpoint, opts.random_policy) {
                (Some(p), _) => checkpoint::load(p)?.agent,
                (None, true) => cfg.new_agent()?,
                (None, false) => return Err(Error::Config("eval needs --checkpoint (or a random policy)".into())),
            };
            if agent.online.input_dim() != crate::dqn::OBS_DIM || agent.spec.num_actions() != cfg.action_spec()?.num_actions() {
                return Err(Error::Config("checkpoint does not match the scenario's action space".into()));
            }
            let mut traj = trajectory_table()?;
            let mut outcomes = outcome_table(m, true)?;
            evaluate(cfg, &mut agent, cfg.analysis.eval_episodes, opts.random_policy, |ep, rep| {
                append_trajectory(&mut traj, ep, &rep.log)?;
                outcomes.row(&outcome_row(ep, rep.steps, Some(rep.total_reward), &rep.outcome))
            })?;
            out.write(EVAL_OUTCOMES, &outcomes.into_bytes()?)?;
            out.write(TRAJECTORIES, &traj.into_bytes()?)?;
        }
        Command::Analyze => {
            let input = opts.input.clone().unwrap_or_else(|| out.dir.join(TRAINING_LOG));
            let rows = read_training_log(&input)?;
            let consistency = consistency_csv(&rows, cfg)?;
            let curve = reward_curve_csv(&rows, cfg)?;
            out.write(CONSISTENCY, &consistency)?;
            out.write(REWARD_CURVE, &curve)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_row_roundtrip() {
        let row = TrainRow {
            episode: 3,
            total_reward: 12.5,
            steps: 80,
            outcome: OutcomeKind::Capture,
            epsilon: 0.9,
            loss_mean: None,
            delay_mean_slots: 0.25,
            payoffs: vec![0.1, f64::INFINITY, -2.0],
        };
        let mut t = Table::new(&TrainRow::header(3)).unwrap();
        t.row(&row.to_record()).unwrap();
        let bytes = t.into_bytes().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        fs::write(&p, &bytes).unwrap();
        assert_eq!(read_training_log(&p).unwrap(), vec![row]);
        assert!(!bytes.contains(&b'\r'));
    }
}
