use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use uuv_hunt::config::{load_config, ScenarioConfig};
use uuv_hunt::dqn::DelayMode;
use uuv_hunt::runner::{run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "uuv-hunt", version, about = "Multi-vehicle underwater target hunting: simulate, train, eval, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analytic closed-loop episodes without delay.
    Simulate(Args),
    /// Delayed deep Q-learning.
    Train(Args),
    /// Frozen-policy rollouts from a checkpoint.
    Eval(Args),
    /// Consistency and smoothed reward curves from a training log.
    Analyze(Args),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(clap::Args)]
struct Args {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Acoustic delay on or off.
    #[arg(long, value_enum)]
    delay: Option<OnOff>,
    /// Disturbance bound (m/s²).
    #[arg(long)]
    disturbance: Option<f64>,
    /// Episode count for the chosen command.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    strict_escape: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training log for analyze.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Evaluate uniform random actions.
    #[arg(long)]
    random_policy: bool,
    /// Write solver diagnostics.
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Analyze(a) => (Command::Analyze, a),
    };
    let result = (|| {
        let mut cfg = match &args.config {
            Some(p) => load_config(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(d) = args.delay {
            cfg.acoustics.mode = match d {
                OnOff::On => DelayMode::Acoustic,
                OnOff::Off => DelayMode::Off,
            };
        }
        if let Some(b) = args.disturbance {
            cfg.disturbance.bound = b;
        }
        if let Some(n) = args.episodes {
            match command {
                Command::Simulate => cfg.solver.episodes = n,
                Command::Train => cfg.dqn.episodes = n,
                Command::Eval => cfg.analysis.eval_episodes = n,
                Command::Analyze => {}
            }
        }
        if args.strict_escape {
            cfg.system.strict_escape = true;
        }
        let opts = RunOptions {
            checkpoint: args.checkpoint.clone(),
            input: args.input.clone(),
            verbose: args.verbose,
            random_policy: args.random_policy,
        };
        run(command, &cfg, &args.out, &opts)
    })();
    match result {
        Ok(m) => {
            eprintln!("{}: wrote {} to {}", command.as_str(), m.outputs.join(", "), args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
