use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cointwin::agent::{Agent, Mode};
use cointwin::game::Arbitration;
use cointwin::harness::{
    cmd_game, cmd_sweep, cmd_train, cmd_twin, cmd_verify_epg, mean_std, ExperimentConfig,
    HarnessError, SweepAxis,
};

#[derive(Parser)]
#[command(name = "cointwin", version, about = "PWR startup twin and COIN offloading experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    arbitration: Option<ArbArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ddqn,
    Rand,
    Mec,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArbArg {
    Random,
    Roundrobin,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Subsystems,
    CoinNodes,
    TaskType,
}

#[derive(Subcommand)]
enum Cmd {
    /// Calibration and operation run of the twin.
    Twin,
    /// Score one method on every seed.
    Game {
        /// Agent weights written by `train`; trained on the fly otherwise.
        #[arg(long)]
        agent: Option<PathBuf>,
    },
    /// Train the agent and write curves and checkpoints.
    Train {
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many more episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// All methods along one experimental axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
    },
    /// Check the potential identity on unilateral deviations.
    VerifyEpg,
}

fn load_config(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Config {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = c.mode {
        cfg.mode = match m {
            ModeArg::Ddqn => Mode::Ddqn,
            ModeArg::Rand => Mode::Rand,
            ModeArg::Mec => Mode::Mec,
        };
    }
    if let Some(a) = c.arbitration {
        cfg.game.arbitration = match a {
            ArbArg::Random => Arbitration::Random,
            ArbArg::Roundrobin => Arbitration::RoundRobin,
        };
    }
    cfg.out_dir = Some(c.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_path();
    match cli.cmd {
        Cmd::Twin => {
            let traj = cmd_twin(&cfg, out)?;
            let last = traj.records.last().context("empty trajectory")?;
            println!("{} steps, final estimate S{} control u{}", traj.records.len(), last.estimate, last.control);
        }
        Cmd::Game { agent } => {
            let agent: Option<Agent> = match agent {
                Some(p) => Some(serde_json::from_str(&read(&p)?).context("parsing agent weights")?),
                None => None,
            };
            let rows = cmd_game(&cfg, out, agent.as_ref())?;
            let (m, s) = mean_std(&rows.iter().map(|r| r.mean_utility).collect::<Vec<_>>());
            println!("{} seeds, mean utility {m:.4} ± {s:.4}", rows.len());
        }
        Cmd::Train { resume, episodes } => {
            let ck = resume.as_deref().map(read).transpose()?;
            let s = cmd_train(&cfg, out, ck.as_deref(), episodes)?;
            match s.best_val {
                Some(v) => println!("{} episodes, best validation utility {v:.4}", s.trainer.episode()),
                None => println!("{} episodes", s.trainer.episode()),
            }
        }
        Cmd::Sweep { axis } => {
            let axis = match axis {
                AxisArg::Subsystems => SweepAxis::Subsystems,
                AxisArg::CoinNodes => SweepAxis::CoinNodes,
                AxisArg::TaskType => SweepAxis::TaskType,
            };
            for c in cmd_sweep(&cfg, axis, out)? {
                println!(
                    "{}={:<3} ddqn {:.4} rand {:.4} mec {:.4}",
                    axis.name(),
                    c.value,
                    mean_std(&c.ddqn).0,
                    mean_std(&c.rand).0,
                    mean_std(&c.mec).0
                );
            }
        }
        Cmd::VerifyEpg => {
            let reps = cmd_verify_epg(&cfg, out)?;
            let checked: usize = reps.iter().map(|r| r.checked()).sum();
            println!("{checked} deviations checked, 0 failures");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
