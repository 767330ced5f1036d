//! Branching double-Q agent: a shared trunk with one 121-way head per
//! subsystem, trained from replay against a lagged target copy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{OrraEnv, N_GRID_ACTIONS};
use super::mlp::{clip_grad_norm, Adam, Mlp};
use super::replay::{ReplayBuffer, Transition};
use super::AgentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub target_refresh: u64,
    pub gamma: f64,
    pub clip_norm: f64,
    pub buffer: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the episode budget over which ε anneals.
    pub anneal_frac: f64,
    /// Environment slots between gradient steps.
    pub train_every: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: 1e-3,
            batch: 64,
            target_refresh: 200,
            gamma: 0.9,
            clip_norm: 10.0,
            buffer: 10_000,
            eps_start: 1.0,
            eps_end: 0.05,
            anneal_frac: 0.5,
            train_every: 1,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |s: &str| Err(AgentError::Config(s.into()));
        if self.batch == 0 || self.buffer == 0 || self.target_refresh == 0 || self.train_every == 0 {
            return bad("batch, buffer, target_refresh and train_every must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return bad("lr and clip_norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        if !(self.anneal_frac > 0.0 && self.anneal_frac <= 1.0) {
            return bad("anneal_frac must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub cfg: AgentConfig,
    n_sub: usize,
    n_types: usize,
    online: Mlp,
    target: Mlp,
    adam: Adam,
    train_steps: u64,
}

/// Index of the largest value, lowest index on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        cfg: AgentConfig,
        n_sub: usize,
        n_types: usize,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        let mut sizes = vec![n_sub * (n_types + 1)];
        sizes.extend(&cfg.hidden);
        sizes.push(n_sub * N_GRID_ACTIONS);
        let online = Mlp::new(&sizes, rng);
        let adam = Adam::new(online.n_params(), cfg.lr);
        Ok(Self {
            cfg,
            n_sub,
            n_types,
            target: online.clone(),
            online,
            adam,
            train_steps: 0,
        })
    }

    pub fn n_subsystems(&self) -> usize {
        self.n_sub
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn online_mut(&mut self) -> &mut Mlp {
        &mut self.online
    }

    /// One-hot request vector.
    pub fn encode(&self, mu: &[u8]) -> Vec<f64> {
        let w = self.n_types + 1;
        let mut x = vec![0.0; self.n_sub * w];
        for (m, &v) in mu.iter().enumerate() {
            x[m * w + v as usize] = 1.0;
        }
        x
    }

    pub fn q_values(&self, mu: &[u8]) -> Vec<f64> {
        self.online.forward(&self.encode(mu))
    }

    pub fn greedy(&self, mu: &[u8]) -> Vec<u16> {
        self.q_values(mu)
            .chunks_exact(N_GRID_ACTIONS)
            .map(|head| argmax(head) as u16)
            .collect()
    }

    /// ε-greedy over the joint action.
    pub fn act<R: Rng + ?Sized>(&self, mu: &[u8], epsilon: f64, rng: &mut R) -> Vec<u16> {
        if rng.random::<f64>() < epsilon {
            (0..self.n_sub)
                .map(|_| rng.random_range(0..N_GRID_ACTIONS) as u16)
                .collect()
        } else {
            self.greedy(mu)
        }
    }

    /// Double-Q regression on a batch; `None` for an empty batch.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Option<f64> {
        if batch.is_empty() {
            return None;
        }
        let scale = 1.0 / (batch.len() * self.n_sub) as f64;
        let mut grad = vec![0.0; self.online.n_params()];
        let mut loss = 0.0;
        for t in batch {
            let xn = self.encode(&t.next_state);
            let q_on = self.online.forward(&xn);
            let q_tg = self.target.forward(&xn);
            let cache = self.online.forward_cached(&self.encode(&t.state));
            let q = cache.output();
            let mut d_out = vec![0.0; q.len()];
            for m in 0..self.n_sub {
                let head = m * N_GRID_ACTIONS..(m + 1) * N_GRID_ACTIONS;
                let a_star = argmax(&q_on[head.clone()]);
                let y = t.reward[m] + self.cfg.gamma * q_tg[head.start + a_star];
                let idx = head.start + t.action[m] as usize;
                let err = q[idx] - y;
                loss += err * err * scale;
                d_out[idx] = 2.0 * err * scale;
            }
            self.online.backward(&cache, &d_out, &mut grad);
        }
        clip_grad_norm(&mut grad, self.cfg.clip_norm);
        self.adam.step(self.online.params_mut(), &grad);
        self.train_steps += 1;
        if self.train_steps % self.cfg.target_refresh == 0 {
            self.target = self.online.clone();
        }
        Some(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub mean_utility: f64,
    pub mean_reward: f64,
    pub loss: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub agent: AgentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            steps_per_episode: 50,
            agent: AgentConfig::default(),
        }
    }
}

/// Agent, replay memory, environment and RNG, checkpointable as a unit.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub env: OrraEnv,
    rng: ChaCha8Rng,
    episode: usize,
    slots: u64,
    pub log: Vec<EpisodeLog>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    cfg: TrainConfig,
    agent: Agent,
    buffer: ReplayBuffer,
    env: super::env::EnvState,
    rng: ChaCha8Rng,
    episode: usize,
    slots: u64,
    log: Vec<EpisodeLog>,
}

const CHECKPOINT_VERSION: u32 = 1;

impl Trainer {
    pub fn new(cfg: TrainConfig, env: OrraEnv, seed: u64) -> Result<Self, AgentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(cfg.agent.clone(), env.n_subsystems(), env.n_types(), &mut rng)?;
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.agent.buffer),
            cfg,
            agent,
            env,
            rng,
            episode: 0,
            slots: 0,
            log: Vec::new(),
        })
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Linear anneal over the first `anneal_frac` of the episode budget.
    pub fn epsilon(&self) -> f64 {
        let a = &self.cfg.agent;
        let span = (self.cfg.episodes as f64 * a.anneal_frac).max(1.0);
        let p = (self.episode as f64 / span).min(1.0);
        a.eps_start + (a.eps_end - a.eps_start) * p
    }

    pub fn run_episode(&mut self) -> Result<EpisodeLog, AgentError> {
        let eps = self.epsilon();
        self.env.reset()?;
        let (mut util, mut rew, mut loss, mut n_loss) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..self.cfg.steps_per_episode {
            let state = self.env.mu().to_vec();
            let action = self.agent.act(&state, eps, &mut self.rng);
            self.env.advance();
            let out = self.env.evaluate(&self.env.ratios(&action))?;
            util += out.total_utility;
            rew += out.total_reward();
            self.buffer.push(Transition {
                state,
                action,
                reward: out.reward,
                next_state: self.env.mu().to_vec(),
            });
            self.slots += 1;
            if self.buffer.len() >= self.cfg.agent.batch
                && self.slots % self.cfg.agent.train_every as u64 == 0
            {
                let batch = self.buffer.sample(self.cfg.agent.batch, &mut self.rng);
                if let Some(l) = self.agent.train_step(&batch) {
                    loss += l;
                    n_loss += 1;
                }
            }
        }
        let n = self.cfg.steps_per_episode.max(1) as f64;
        let entry = EpisodeLog {
            episode: self.episode,
            mean_utility: util / n,
            mean_reward: rew / n,
            loss: if n_loss > 0 { loss / n_loss as f64 } else { 0.0 },
            epsilon: eps,
        };
        self.episode += 1;
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Runs until the configured episode budget is spent or `limit` more
    /// episodes have run.
    pub fn train(&mut self, limit: Option<usize>) -> Result<(), AgentError> {
        let stop = limit.map_or(self.cfg.episodes, |l| (self.episode + l).min(self.cfg.episodes));
        while self.episode < stop {
            self.run_episode()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, AgentError> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            cfg: self.cfg.clone(),
            agent: self.agent.clone(),
            buffer: self.buffer.clone(),
            env: self.env.state(),
            rng: self.rng.clone(),
            episode: self.episode,
            slots: self.slots,
            log: self.log.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self, AgentError> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(AgentError::Config(format!(
                "checkpoint version {} unsupported",
                ck.version
            )));
        }
        Ok(Self {
            cfg: ck.cfg,
            agent: ck.agent,
            buffer: ck.buffer,
            env: OrraEnv::from_state(ck.env)?,
            rng: ck.rng,
            episode: ck.episode,
            slots: ck.slots,
            log: ck.log,
        })
    }
}
