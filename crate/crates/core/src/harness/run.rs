use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{csv_writer, fmt_f64, mean_std, paired_p_greater, ExperimentConfig, HarnessError};
use crate::agent::{evaluate, Agent, EpisodeLog, Mode, OrraEnv, Trainer};
use crate::game::{verify_epg, verify_epg_exhaustive, EpgReport, GameContext};
use crate::offload::{Scenario, ScenarioParams, TaskPreset};
use crate::twin::{run_twin, TwinModel, TwinStepRecord, TwinTrajectory};

/// Validation environments use seeds counting down from here, away from
/// evaluation seeds.
pub const VALIDATION_SEED_BASE: u64 = u64::MAX - 1024;

/// Request-stream and random-baseline seeds paired with a scenario seed.
pub fn eval_streams(seed: u64) -> (u64, u64) {
    (seed ^ 0x5EED_0000_0000_0001, seed ^ 0x5EED_0000_0000_0002)
}

fn twin_rows(
    cfg: &ExperimentConfig,
    dir: &Path,
    name: &str,
    rows: &[&TwinStepRecord],
    n_states: usize,
) -> Result<(), HarnessError> {
    let mut w = csv_writer(dir, name, cfg)?;
    let mut header: Vec<String> = [
        "t", "true_state", "estimate", "control", "p_prev", "p_control_obs", "p_pair", "entropy",
        "r_control", "r_state", "r_obs", "reward", "degenerate", "pl", "rct", "rcp", "sgp", "sgl",
        "rp",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..n_states).map(|d| format!("b_{d}")));
    w.write_record(&header)?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for r in rows {
        let mut rec = vec![
            r.t.to_string(),
            format!("S{}", r.true_state),
            format!("S{}", r.estimate),
            format!("u{}", r.control),
            opt(r.p_prev),
            opt(r.p_control_obs),
            opt(r.p_pair),
            fmt_f64(r.entropy),
            fmt_f64(r.reward.r_control),
            fmt_f64(r.reward.r_state),
            fmt_f64(r.reward.r_obs),
            fmt_f64(r.reward.total),
            r.degenerate.to_string(),
        ];
        rec.extend(r.observation.to_array().iter().map(|&x| fmt_f64(x)));
        rec.extend(r.belief.iter().map(|&x| fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Calibration then operation against the simulated plant, seeded by the
/// first configured seed. Writes `twin_calibration.csv` and
/// `twin_operation.csv`.
pub fn cmd_twin(cfg: &ExperimentConfig, dir: &Path) -> Result<TwinTrajectory, HarnessError> {
    cfg.validate()?;
    let model = TwinModel::build(cfg.twin.clone())?;
    let mut run = cfg.twin_run.clone();
    run.seed = cfg.seeds[0];
    let traj = run_twin(&model, &run)?;
    let n = model.n_states();
    let cal: Vec<_> = traj.calibration().collect();
    let op: Vec<_> = traj.operation().collect();
    twin_rows(cfg, dir, "twin_calibration.csv", &cal, n)?;
    twin_rows(cfg, dir, "twin_operation.csv", &op, n)?;
    Ok(traj)
}

/// Training run plus best-by-validation bookkeeping; checkpointable.
#[derive(Debug, Clone)]
pub struct TrainSession {
    pub trainer: Trainer,
    pub best: Agent,
    pub best_val: Option<f64>,
    /// `(episodes done, validation utility)`.
    pub val_log: Vec<(usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct SessionFile {
    version: u32,
    trainer: serde_json::Value,
    best: Agent,
    best_val: Option<f64>,
    val_log: Vec<(usize, f64)>,
}

impl TrainSession {
    /// Trains on scenarios redrawn each episode from `scenario`.
    pub fn new(cfg: &ExperimentConfig, scenario: &ScenarioParams) -> Result<Self, HarnessError> {
        let env = OrraEnv::new(
            cfg.env_params_for(scenario, true),
            cfg.train_seed,
            cfg.train_seed.wrapping_add(1),
        )?;
        let trainer = Trainer::new(cfg.train.clone(), env, cfg.train_seed)?;
        Ok(Self {
            best: trainer.agent.clone(),
            trainer,
            best_val: None,
            val_log: Vec::new(),
        })
    }

    fn validate(&self, cfg: &ExperimentConfig) -> Result<f64, HarnessError> {
        let mut params = self.trainer.env.params.clone();
        params.resample = false;
        let mut total = 0.0;
        for i in 0..cfg.validation.n_envs as u64 {
            let seed = VALIDATION_SEED_BASE - i;
            let mut env = OrraEnv::new(params.clone(), seed, eval_streams(seed).0)?;
            let rep = evaluate(&mut env, Mode::Ddqn, Some(&self.trainer.agent), cfg.validation.slots, 0)?;
            total += rep.mean_utility();
        }
        Ok(total / cfg.validation.n_envs as f64)
    }

    /// Runs up to `limit` more episodes (all remaining when `None`).
    pub fn run(&mut self, cfg: &ExperimentConfig, limit: Option<usize>) -> Result<(), HarnessError> {
        let total = self.trainer.cfg.episodes;
        let stop = limit.map_or(total, |l| (self.trainer.episode() + l).min(total));
        while self.trainer.episode() < stop {
            self.trainer.run_episode()?;
            let done = self.trainer.episode();
            let every = cfg.validation.every;
            if every == 0 {
                self.best = self.trainer.agent.clone();
            } else if done % every == 0 || done == total {
                let v = self.validate(cfg)?;
                self.val_log.push((done, v));
                if self.best_val.is_none_or(|b| v > b) {
                    self.best_val = Some(v);
                    self.best = self.trainer.agent.clone();
                }
            }
        }
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.trainer.episode() >= self.trainer.cfg.episodes
    }

    pub fn log(&self) -> &[EpisodeLog] {
        &self.trainer.log
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        let f = SessionFile {
            version: 1,
            trainer: serde_json::from_str(&self.trainer.to_json()?)?,
            best: self.best.clone(),
            best_val: self.best_val,
            val_log: self.val_log.clone(),
        };
        Ok(serde_json::to_string(&f)?)
    }

    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let f: SessionFile = serde_json::from_str(s)?;
        if f.version != 1 {
            return Err(HarnessError::Config {
                path: "checkpoint.version".into(),
                msg: format!("unsupported version {}", f.version),
            });
        }
        Ok(Self {
            trainer: Trainer::from_json(&f.trainer.to_string())?,
            best: f.best,
            best_val: f.best_val,
            val_log: f.val_log,
        })
    }
}

/// Trains one agent for a scenario family and returns the best validated one.
pub fn train_agent(cfg: &ExperimentConfig, scenario: &ScenarioParams) -> Result<Agent, HarnessError> {
    let mut s = TrainSession::new(cfg, scenario)?;
    s.run(cfg, None)?;
    Ok(s.best)
}

/// Trains (or resumes) an agent. Writes `train_curve.csv`, `checkpoint.json`,
/// `agent.json` (best validated weights) and `train_eval.csv` (greedy
/// evaluation of that agent on every configured seed) once training is done.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    dir: &Path,
    resume: Option<&str>,
    limit: Option<usize>,
) -> Result<TrainSession, HarnessError> {
    cfg.validate()?;
    let mut session = match resume {
        Some(json) => TrainSession::from_json(json)?,
        None => TrainSession::new(cfg, &cfg.scenario)?,
    };
    session.run(cfg, limit)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("checkpoint.json"), session.to_json()?)?;
    std::fs::write(dir.join("agent.json"), serde_json::to_string(&session.best)?)?;

    let mut w = csv_writer(dir, "train_curve.csv", cfg)?;
    w.write_record(["episode", "mean_utility", "mean_reward", "loss", "epsilon", "validation_utility"])?;
    for e in session.log() {
        let val = session
            .val_log
            .iter()
            .find(|(n, _)| *n == e.episode + 1)
            .map(|&(_, v)| fmt_f64(v))
            .unwrap_or_default();
        w.write_record([
            e.episode.to_string(),
            fmt_f64(e.mean_utility),
            fmt_f64(e.mean_reward),
            fmt_f64(e.loss),
            fmt_f64(e.epsilon),
            val,
        ])?;
    }
    w.flush()?;

    if session.is_done() {
        let mut w = csv_writer(dir, "train_eval.csv", cfg)?;
        w.write_record(["seed", "greedy_utility"])?;
        for &seed in &cfg.seeds {
            let mut env = OrraEnv::new(cfg.env_params(false), seed, eval_streams(seed).0)?;
            let rep = evaluate(&mut env, Mode::Ddqn, Some(&session.best), cfg.eval_slots, 0)?;
            w.write_record([seed.to_string(), fmt_f64(rep.mean_utility())])?;
        }
        w.flush()?;
    }
    Ok(session)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameRow {
    pub seed: u64,
    pub mean_utility: f64,
    pub mean_iterations: f64,
    pub converged: bool,
    pub per_subsystem: Vec<f64>,
}

fn eval_seed(
    cfg: &ExperimentConfig,
    scenario: &ScenarioParams,
    seed: u64,
    mode: Mode,
    agent: Option<&Agent>,
) -> Result<GameRow, HarnessError> {
    let (stream, rand_seed) = eval_streams(seed);
    let mut env = OrraEnv::new(cfg.env_params_for(scenario, false), seed, stream)?;
    let rep = evaluate(&mut env, mode, agent, cfg.eval_slots, rand_seed)?;
    let iters = rep.iterations.iter().sum::<usize>() as f64 / rep.iterations.len().max(1) as f64;
    Ok(GameRow {
        seed,
        mean_utility: rep.mean_utility(),
        mean_iterations: iters,
        converged: rep.all_converged,
        per_subsystem: rep.per_subsystem,
    })
}

/// Scores the configured method on every seed; one row per seed plus an
/// aggregate row. DDQN mode trains an agent first unless one is given.
pub fn cmd_game(
    cfg: &ExperimentConfig,
    dir: &Path,
    agent: Option<&Agent>,
) -> Result<Vec<GameRow>, HarnessError> {
    cfg.validate()?;
    let trained;
    let agent = match (cfg.mode, agent) {
        (Mode::Ddqn, None) => {
            trained = train_agent(cfg, &cfg.scenario)?;
            Some(&trained)
        }
        (_, a) => a,
    };
    let rows: Vec<GameRow> = cfg
        .seeds
        .iter()
        .map(|&s| eval_seed(cfg, &cfg.scenario, s, cfg.mode, agent))
        .collect::<Result<_, _>>()?;

    let m = cfg.scenario.n_subsystems;
    let mode = serde_json::to_value(cfg.mode)?.as_str().unwrap_or_default().to_string();
    let mut w = csv_writer(dir, "game.csv", cfg)?;
    let mut header: Vec<String> = [
        "row", "seed", "mode", "n_subsystems", "n_cn", "utility", "utility_std", "iterations",
        "converged",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=m).map(|i| format!("u_{i}")));
    w.write_record(&header)?;
    let fixed = |row: &str, seed: String, u: f64, sd: String, it: f64, conv: bool| {
        vec![
            row.to_string(),
            seed,
            mode.clone(),
            m.to_string(),
            cfg.scenario.n_cn.to_string(),
            fmt_f64(u),
            sd,
            fmt_f64(it),
            conv.to_string(),
        ]
    };
    for r in &rows {
        let mut rec = fixed("seed", r.seed.to_string(), r.mean_utility, String::new(), r.mean_iterations, r.converged);
        rec.extend(r.per_subsystem.iter().map(|&u| fmt_f64(u)));
        w.write_record(&rec)?;
    }
    let utils: Vec<f64> = rows.iter().map(|r| r.mean_utility).collect();
    let (mu, sd) = mean_std(&utils);
    let iters = rows.iter().map(|r| r.mean_iterations).sum::<f64>() / rows.len() as f64;
    let all = rows.iter().all(|r| r.converged);
    let mut rec = fixed("aggregate", String::new(), mu, fmt_f64(sd), iters, all);
    rec.extend((0..m).map(|i| fmt_f64(rows.iter().map(|r| r.per_subsystem[i]).sum::<f64>() / rows.len() as f64)));
    w.write_record(&rec)?;
    w.flush()?;

    if let Some(bad) = rows.iter().find(|r| !r.converged) {
        return Err(HarnessError::Convergence(format!(
            "game did not settle within the iteration budget for seed {}",
            bad.seed
        )));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Subsystems,
    CoinNodes,
    TaskType,
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subsystems" => Ok(SweepAxis::Subsystems),
            "coin_nodes" => Ok(SweepAxis::CoinNodes),
            "task_type" => Ok(SweepAxis::TaskType),
            other => Err(HarnessError::Config {
                path: "axis".into(),
                msg: format!("unknown sweep axis {other:?}"),
            }),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Subsystems => "subsystems",
            SweepAxis::CoinNodes => "coin_nodes",
            SweepAxis::TaskType => "task_type",
        }
    }

    fn cells(&self, cfg: &ExperimentConfig) -> Vec<(usize, ScenarioParams)> {
        let base = &cfg.scenario;
        match self {
            SweepAxis::Subsystems => cfg
                .sweep
                .subsystems
                .iter()
                .map(|&m| (m, ScenarioParams { n_subsystems: m, ..base.clone() }))
                .collect(),
            SweepAxis::CoinNodes => cfg
                .sweep
                .coin_nodes
                .iter()
                .map(|&k| (k, ScenarioParams { n_cn: k, ..base.clone() }))
                .collect(),
            SweepAxis::TaskType => cfg
                .sweep
                .task_types
                .iter()
                .map(|&t| (t as usize, ScenarioParams { preset: TaskPreset::Type(t), ..base.clone() }))
                .collect(),
        }
    }
}

/// Per-cell results of a sweep, utilities indexed like the seed list.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub value: usize,
    pub ddqn: Vec<f64>,
    pub rand: Vec<f64>,
    pub mec: Vec<f64>,
}

impl SweepCell {
    pub fn p_ddqn_over_mec(&self) -> f64 {
        paired_p_greater(&self.ddqn, &self.mec)
    }

    pub fn p_ddqn_over_rand(&self) -> f64 {
        paired_p_greater(&self.ddqn, &self.rand)
    }
}

/// All three methods along one axis, with one agent trained per cell.
/// Writes `sweep_<axis>.csv` (one row per cell and seed) and
/// `sweep_<axis>_summary.csv`.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    dir: &Path,
) -> Result<Vec<SweepCell>, HarnessError> {
    cfg.validate()?;
    if cfg.seeds.len() < cfg.sweep.min_seeds {
        return Err(HarnessError::Config {
            path: "seeds".into(),
            msg: format!("sweep needs at least {} seeds, got {}", cfg.sweep.min_seeds, cfg.seeds.len()),
        });
    }
    let mut cells = Vec::new();
    for (value, scenario) in axis.cells(cfg) {
        let agent = train_agent(cfg, &scenario)?;
        let mut cell = SweepCell {
            value,
            ddqn: Vec::new(),
            rand: Vec::new(),
            mec: Vec::new(),
        };
        for &seed in &cfg.seeds {
            for (mode, out) in [
                (Mode::Ddqn, &mut cell.ddqn),
                (Mode::Rand, &mut cell.rand),
                (Mode::Mec, &mut cell.mec),
            ] {
                let row = eval_seed(cfg, &scenario, seed, mode, Some(&agent))?;
                if !row.converged {
                    return Err(HarnessError::Convergence(format!(
                        "{} = {value}, seed {seed}: game did not settle",
                        axis.name()
                    )));
                }
                out.push(row.mean_utility);
            }
        }
        cells.push(cell);
    }

    let name = axis.name();
    let mut w = csv_writer(dir, &format!("sweep_{name}.csv"), cfg)?;
    w.write_record([name, "seed", "ddqn", "rand", "mec"])?;
    for c in &cells {
        for (i, seed) in cfg.seeds.iter().enumerate() {
            w.write_record([
                c.value.to_string(),
                seed.to_string(),
                fmt_f64(c.ddqn[i]),
                fmt_f64(c.rand[i]),
                fmt_f64(c.mec[i]),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(dir, &format!("sweep_{name}_summary.csv"), cfg)?;
    w.write_record([
        name, "n_seeds", "ddqn_mean", "ddqn_std", "rand_mean", "rand_std", "mec_mean", "mec_std",
        "p_ddqn_gt_rand", "p_ddqn_gt_mec",
    ])?;
    for c in &cells {
        let (dm, ds) = mean_std(&c.ddqn);
        let (rm, rs) = mean_std(&c.rand);
        let (mm, ms) = mean_std(&c.mec);
        w.write_record([
            c.value.to_string(),
            cfg.seeds.len().to_string(),
            fmt_f64(dm),
            fmt_f64(ds),
            fmt_f64(rm),
            fmt_f64(rs),
            fmt_f64(mm),
            fmt_f64(ms),
            fmt_f64(c.p_ddqn_over_rand()),
            fmt_f64(c.p_ddqn_over_mec()),
        ])?;
    }
    w.flush()?;
    Ok(cells)
}

/// Checks the potential identity on every seed's scenario under the default
/// CN ratios: exhaustively when M ≤ 4 and K ≤ 3, else on `epg_trials`
/// random profiles. Writes `epg.csv`.
pub fn cmd_verify_epg(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<EpgReport>, HarnessError> {
    cfg.validate()?;
    let (m, k) = (cfg.scenario.n_subsystems, cfg.scenario.n_cn);
    let exhaustive = m <= 4 && k <= 3;
    let mut reports = Vec::new();
    let mut w = csv_writer(dir, "epg.csv", cfg)?;
    w.write_record([
        "seed", "n_subsystems", "n_cn", "exhaustive", "es_cn", "cn_cn", "identity", "skipped",
        "failures", "max_rel_err",
    ])?;
    for &seed in &cfg.seeds {
        let sc = Scenario::generate(&cfg.scenario, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(crate::game::GameError::from)?;
        let ctx = GameContext::with_default_ratios(&sc, cfg.game.econ);
        let rep = if exhaustive {
            verify_epg_exhaustive(&ctx)?
        } else {
            verify_epg(&ctx, cfg.epg_trials, seed)?
        };
        w.write_record([
            seed.to_string(),
            m.to_string(),
            k.to_string(),
            exhaustive.to_string(),
            rep.es_cn.to_string(),
            rep.cn_cn.to_string(),
            rep.identity.to_string(),
            rep.skipped.to_string(),
            rep.failures.to_string(),
            fmt_f64(rep.max_rel_err),
        ])?;
        reports.push(rep);
    }
    w.flush()?;
    let failures: usize = reports.iter().map(|r| r.failures).sum();
    if failures > 0 {
        return Err(HarnessError::Verification(format!("{failures} deviations broke the potential identity")));
    }
    Ok(reports)
}
