use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::agent::{EnvParams, Mode, TrainConfig};
use crate::game::Arbitration;
use crate::offload::{Economics, ScenarioParams};
use crate::twin::{TwinConfig, TwinRunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameParams {
    pub econ: Economics,
    pub arbitration: Arbitration,
    /// Defaults to 10·M·(K+1).
    pub max_iters: Option<usize>,
}

impl Default for GameParams {
    fn default() -> Self {
        Self {
            econ: Economics::default(),
            arbitration: Arbitration::Random,
            max_iters: None,
        }
    }
}

/// Request process seen by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestParams {
    pub n_types: usize,
    pub persistence: f64,
}

impl Default for RequestParams {
    fn default() -> Self {
        Self {
            n_types: 3,
            persistence: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationParams {
    /// Episodes between greedy validation runs; 0 disables validation.
    pub every: usize,
    pub n_envs: usize,
    pub slots: usize,
}

impl Default for ValidationParams {
    fn default() -> Self {
        Self {
            every: 10,
            n_envs: 2,
            slots: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub subsystems: Vec<usize>,
    pub coin_nodes: Vec<usize>,
    pub task_types: Vec<u8>,
    pub min_seeds: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            subsystems: vec![4, 6, 8, 10, 12],
            coin_nodes: (1..=10).collect(),
            task_types: (1..=6).collect(),
            min_seeds: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub scenario: ScenarioParams,
    pub twin: TwinConfig,
    pub twin_run: TwinRunConfig,
    pub game: GameParams,
    pub requests: RequestParams,
    pub train: TrainConfig,
    pub train_seed: u64,
    pub validation: ValidationParams,
    /// Slots per seed when scoring a method.
    pub eval_slots: usize,
    pub mode: Mode,
    pub sweep: SweepParams,
    /// Random profiles per seed for `verify-epg` above the exhaustive size.
    pub epg_trials: usize,
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: (0..30).collect(),
            scenario: ScenarioParams::default(),
            twin: TwinConfig::default(),
            twin_run: TwinRunConfig::default(),
            game: GameParams::default(),
            requests: RequestParams::default(),
            train: TrainConfig {
                episodes: 100,
                ..TrainConfig::default()
            },
            train_seed: 7,
            validation: ValidationParams::default(),
            eval_slots: 50,
            mode: Mode::Ddqn,
            sweep: SweepParams::default(),
            epg_trials: 200,
            out_dir: None,
        }
    }
}

fn bad(path: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

pub(crate) fn check_m(path: &str, m: usize) -> Result<(), HarnessError> {
    if (4..=12).contains(&m) {
        Ok(())
    } else {
        Err(bad(path, format!("{m} subsystems outside [4, 12]")))
    }
}

pub(crate) fn check_k(path: &str, k: usize) -> Result<(), HarnessError> {
    if (1..=10).contains(&k) {
        Ok(())
    } else {
        Err(bad(path, format!("{k} CN nodes outside [1, 10]")))
    }
}

impl ExperimentConfig {
    /// Parses JSON; errors name the offending field.
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            bad(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed required"));
        }
        check_m("scenario.n_subsystems", self.scenario.n_subsystems)?;
        check_k("scenario.n_cn", self.scenario.n_cn)?;
        self.scenario
            .preset
            .ranges()
            .map_err(|e| bad("scenario.preset", e.to_string()))?;
        self.scenario
            .channel
            .validate()
            .map_err(|e| bad("scenario.channel", e.to_string()))?;
        self.twin.validate().map_err(|e| bad("twin", e.to_string()))?;
        if !(0.0..1.0).contains(&self.twin_run.gamma) {
            return Err(bad("twin_run.gamma", "discount outside [0, 1)"));
        }
        if self.twin_run.t_p < 4 {
            return Err(bad("twin_run.t_p", "must be at least 4"));
        }
        if !(self.twin_run.obs_noise >= 0.0) {
            return Err(bad("twin_run.obs_noise", "must be non-negative"));
        }
        if self.game.max_iters == Some(0) {
            return Err(bad("game.max_iters", "must be positive"));
        }
        if !(self.game.econ.gain.is_finite() && self.game.econ.price_per_10ghz.is_finite()) {
            return Err(bad("game.econ", "must be finite"));
        }
        self.env_params(false)
            .validate()
            .map_err(|e| bad("requests", e.to_string()))?;
        self.train
            .agent
            .validate()
            .map_err(|e| bad("train.agent", e.to_string()))?;
        if self.train.steps_per_episode == 0 {
            return Err(bad("train.steps_per_episode", "must be positive"));
        }
        if self.validation.every > 0 && (self.validation.n_envs == 0 || self.validation.slots == 0) {
            return Err(bad("validation", "n_envs and slots must be positive"));
        }
        if self.eval_slots == 0 {
            return Err(bad("eval_slots", "must be positive"));
        }
        for (i, &m) in self.sweep.subsystems.iter().enumerate() {
            check_m(&format!("sweep.subsystems[{i}]"), m)?;
        }
        for (i, &k) in self.sweep.coin_nodes.iter().enumerate() {
            check_k(&format!("sweep.coin_nodes[{i}]"), k)?;
        }
        for (i, &t) in self.sweep.task_types.iter().enumerate() {
            if !(1..=6).contains(&t) {
                return Err(bad(&format!("sweep.task_types[{i}]"), format!("type {t} outside 1..=6")));
            }
        }
        Ok(())
    }

    pub fn env_params(&self, resample: bool) -> EnvParams {
        self.env_params_for(&self.scenario, resample)
    }

    pub fn env_params_for(&self, scenario: &ScenarioParams, resample: bool) -> EnvParams {
        EnvParams {
            scenario: scenario.clone(),
            n_types: self.requests.n_types,
            persistence: self.requests.persistence,
            econ: self.game.econ,
            arbitration: self.game.arbitration,
            resample,
            max_iters: self.game.max_iters,
        }
    }

    /// SHA-256 of the canonical JSON form; the output directory is excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
