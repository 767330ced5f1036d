//! Offloading-ratio and resource-allocation learning: the request MDP,
//! a branching double-Q agent, and the random and edge-only baselines.

mod ddqn;
mod env;
mod mlp;
mod replay;

pub use ddqn::{Agent, AgentConfig, EpisodeLog, TrainConfig, Trainer};
pub use env::{
    decode_action, encode_action, project_beta, EnvParams, EnvState, OrraEnv, SlotOutcome, GRID,
    N_GRID_ACTIONS,
};
pub use mlp::{clip_grad_norm, Adam, Cache, Mlp};
pub use replay::{ReplayBuffer, Transition};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::GameError;
use crate::offload::OffloadError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Offload(#[from] OffloadError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
}

/// How CN ratios are chosen each slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Greedy actions of a trained agent.
    Ddqn,
    /// Uniform grid actions.
    Rand,
    /// Edge server only.
    Mec,
}

impl std::str::FromStr for Mode {
    type Err = AgentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ddqn" => Ok(Mode::Ddqn),
            "rand" => Ok(Mode::Rand),
            "mec" => Ok(Mode::Mec),
            other => Err(AgentError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: Mode,
    pub utilities: Vec<f64>,
    pub rewards: Vec<f64>,
    pub actions: Vec<Vec<u16>>,
    /// Mean utility of each subsystem over the run.
    pub per_subsystem: Vec<f64>,
    pub iterations: Vec<usize>,
    pub all_converged: bool,
}

impl EvalReport {
    pub fn mean_utility(&self) -> f64 {
        mean(&self.utilities)
    }

    pub fn mean_reward(&self) -> f64 {
        mean(&self.rewards)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Plays `slots` slots on `env` with the chosen method. The request
/// stream depends only on the environment, so runs with equal seeds are
/// paired across modes.
pub fn evaluate(
    env: &mut OrraEnv,
    mode: Mode,
    agent: Option<&Agent>,
    slots: usize,
    rand_seed: u64,
) -> Result<EvalReport, AgentError> {
    let m = env.n_subsystems();
    let mut rng = ChaCha8Rng::seed_from_u64(rand_seed);
    let mut rep = EvalReport {
        mode,
        utilities: Vec::with_capacity(slots),
        rewards: Vec::with_capacity(slots),
        actions: Vec::with_capacity(slots),
        per_subsystem: vec![0.0; m],
        iterations: Vec::with_capacity(slots),
        all_converged: true,
    };
    for _ in 0..slots {
        let state = env.mu().to_vec();
        let action: Vec<u16> = match mode {
            Mode::Ddqn => agent
                .ok_or_else(|| AgentError::Config("ddqn mode needs an agent".into()))?
                .greedy(&state),
            Mode::Rand => (0..m).map(|_| rng.random_range(0..N_GRID_ACTIONS) as u16).collect(),
            Mode::Mec => vec![0; m],
        };
        env.advance();
        let out = env.evaluate(&env.ratios(&action))?;
        rep.utilities.push(out.total_utility);
        rep.rewards.push(out.total_reward());
        rep.actions.push(action);
        for (acc, u) in rep.per_subsystem.iter_mut().zip(&out.utilities) {
            *acc += u / slots as f64;
        }
        rep.iterations.push(out.iterations);
        rep.all_converged &= out.converged;
    }
    Ok(rep)
}

/// Best joint grid action for the current requests by enumeration; only
/// practical for one or two subsystems.
pub fn exhaustive_best(env: &mut OrraEnv) -> Result<(Vec<u16>, f64), AgentError> {
    let m = env.n_subsystems();
    if m > 2 {
        return Err(AgentError::Config("exhaustive search supports at most 2 subsystems".into()));
    }
    let total = N_GRID_ACTIONS.pow(m as u32);
    let mut best = (vec![0; m], f64::NEG_INFINITY);
    for idx in 0..total {
        let action: Vec<u16> = (0..m)
            .map(|i| ((idx / N_GRID_ACTIONS.pow(i as u32)) % N_GRID_ACTIONS) as u16)
            .collect();
        let r = env.evaluate(&env.ratios(&action))?.total_reward();
        if r > best.1 {
            best = (action, r);
        }
    }
    Ok(best)
}
