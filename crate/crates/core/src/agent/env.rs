//! Request process, ORRA action grid and the game-backed reward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::game::{default_max_iters, run_game, Arbitration, GameContext};
use crate::offload::{Economics, Scenario, ScenarioParams, Strategy, Task};

/// Points per ratio axis: 0, 0.1, ..., 1.0.
pub const GRID: usize = 11;
/// (Φ, β) pairs per subsystem.
pub const N_GRID_ACTIONS: usize = GRID * GRID;

/// `(Φ, β)` of a grid index; Φ varies slowest.
pub fn decode_action(a: u16) -> (f64, f64) {
    let a = a as usize;
    ((a / GRID) as f64 / 10.0, (a % GRID) as f64 / 10.0)
}

pub fn encode_action(phi_idx: usize, beta_idx: usize) -> u16 {
    (phi_idx * GRID + beta_idx) as u16
}

/// Scales the shares down proportionally when they exceed 1 in total.
pub fn project_beta(beta: &[f64]) -> Vec<f64> {
    let s: f64 = beta.iter().sum();
    if s > 1.0 {
        beta.iter().map(|b| b / s).collect()
    } else {
        beta.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    pub scenario: ScenarioParams,
    /// Number of task types F; requests take values in 0..=F, 0 = idle.
    pub n_types: usize,
    pub persistence: f64,
    pub econ: Economics,
    pub arbitration: Arbitration,
    /// Draw a fresh scenario at every reset.
    pub resample: bool,
    /// Game iteration budget; 10·M·(K+1) for the active subsystems when unset.
    pub max_iters: Option<usize>,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            scenario: ScenarioParams::default(),
            n_types: 3,
            persistence: 0.7,
            econ: Economics::default(),
            arbitration: Arbitration::Random,
            resample: false,
            max_iters: None,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.n_types == 0 || self.n_types > u8::MAX as usize {
            return Err(AgentError::Config("n_types must lie in 1..=255".into()));
        }
        if !(0.0..=1.0).contains(&self.persistence) {
            return Err(AgentError::Config("persistence must lie in [0, 1]".into()));
        }
        if self.scenario.n_subsystems == 0 {
            return Err(AgentError::Config("need at least one subsystem".into()));
        }
        Ok(())
    }
}

/// Utilities and per-subsystem rewards of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub total_utility: f64,
    /// Utility per subsystem, 0 when idle.
    pub utilities: Vec<f64>,
    pub reward: Vec<f64>,
    pub nodes: Vec<Option<usize>>,
    pub iterations: usize,
    pub converged: bool,
}

impl SlotOutcome {
    pub fn total_reward(&self) -> f64 {
        self.reward.iter().sum()
    }
}

/// A world with a drawn scenario, a catalog of task types and the request
/// vector μ.
#[derive(Debug, Clone)]
pub struct OrraEnv {
    pub params: EnvParams,
    seed: u64,
    scenario: Scenario,
    catalog: Vec<Task>,
    mu: Vec<u8>,
    rng: ChaCha8Rng,
    resets: u64,
    slot: u64,
}

/// Serializable dynamic part of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub params: EnvParams,
    pub seed: u64,
    pub mu: Vec<u8>,
    pub rng: ChaCha8Rng,
    pub resets: u64,
    pub slot: u64,
}

fn draw_world(params: &EnvParams, seed: u64) -> Result<(Scenario, Vec<Task>), AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = Scenario::generate(&params.scenario, &mut rng)?;
    let catalog = (0..params.n_types)
        .map(|_| params.scenario.preset.sample(params.scenario.t_max, &mut rng))
        .collect::<Result<_, _>>()?;
    Ok((scenario, catalog))
}

fn world_seed(params: &EnvParams, seed: u64, resets: u64) -> u64 {
    if params.resample {
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(resets)
    } else {
        seed
    }
}

impl OrraEnv {
    /// `seed` fixes the scenario draw; `stream` seeds the request process.
    pub fn new(params: EnvParams, seed: u64, stream: u64) -> Result<Self, AgentError> {
        params.validate()?;
        let (scenario, catalog) = draw_world(&params, world_seed(&params, seed, 0))?;
        let mut env = Self {
            mu: vec![0; params.scenario.n_subsystems],
            params,
            seed,
            scenario,
            catalog,
            rng: ChaCha8Rng::seed_from_u64(stream),
            resets: 0,
            slot: 0,
        };
        env.draw_mu();
        Ok(env)
    }

    pub fn state(&self) -> EnvState {
        EnvState {
            params: self.params.clone(),
            seed: self.seed,
            mu: self.mu.clone(),
            rng: self.rng.clone(),
            resets: self.resets,
            slot: self.slot,
        }
    }

    pub fn from_state(s: EnvState) -> Result<Self, AgentError> {
        let ws = world_seed(&s.params, s.seed, s.resets);
        let (scenario, catalog) = draw_world(&s.params, ws)?;
        Ok(Self {
            params: s.params,
            seed: s.seed,
            scenario,
            catalog,
            mu: s.mu,
            rng: s.rng,
            resets: s.resets,
            slot: s.slot,
        })
    }

    pub fn n_subsystems(&self) -> usize {
        self.mu.len()
    }

    pub fn n_types(&self) -> usize {
        self.params.n_types
    }

    pub fn mu(&self) -> &[u8] {
        &self.mu
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn catalog(&self) -> &[Task] {
        &self.catalog
    }

    fn draw_mu(&mut self) {
        let f = self.params.n_types as u8;
        for v in self.mu.iter_mut() {
            *v = self.rng.random_range(0..=f);
        }
    }

    /// Fresh request vector, and a fresh scenario when resampling.
    pub fn reset(&mut self) -> Result<(), AgentError> {
        self.resets += 1;
        if self.params.resample {
            let ws = world_seed(&self.params, self.seed, self.resets);
            let (scenario, catalog) = draw_world(&self.params, ws)?;
            self.scenario = scenario;
            self.catalog = catalog;
        }
        self.draw_mu();
        Ok(())
    }

    /// Pins the request vector.
    pub fn set_mu(&mut self, mu: Vec<u8>) -> Result<(), AgentError> {
        if mu.len() != self.n_subsystems() || mu.iter().any(|&v| v as usize > self.n_types()) {
            return Err(AgentError::Config("request vector out of range".into()));
        }
        self.mu = mu;
        Ok(())
    }

    /// Moves μ one slot forward: each entry persists with the configured
    /// probability, otherwise it is redrawn uniformly.
    pub fn advance(&mut self) {
        let f = self.params.n_types as u8;
        let p = self.params.persistence;
        for v in self.mu.iter_mut() {
            if self.rng.random::<f64>() >= p {
                *v = self.rng.random_range(0..=f);
            }
        }
    }

    /// Per-subsystem CN ratios for an action under the current requests;
    /// β is projected over active subsystems.
    pub fn ratios(&self, action: &[u16]) -> Vec<Option<(f64, f64)>> {
        let decoded: Vec<(f64, f64)> = action.iter().map(|&a| decode_action(a)).collect();
        let betas: Vec<f64> = decoded
            .iter()
            .zip(&self.mu)
            .map(|(&(_, b), &mu)| if mu > 0 { b } else { 0.0 })
            .collect();
        let proj = project_beta(&betas);
        decoded
            .iter()
            .zip(proj)
            .map(|(&(phi, _), b)| (phi > 0.0 && b > 0.0).then_some((phi, b)))
            .collect()
    }

    /// Plays the game for the current requests with the given CN ratios.
    pub fn evaluate(&mut self, ratios: &[Option<(f64, f64)>]) -> Result<SlotOutcome, AgentError> {
        self.slot += 1;
        let active: Vec<usize> = (0..self.n_subsystems()).filter(|&m| self.mu[m] > 0).collect();
        let m_all = self.n_subsystems();
        let mut out = SlotOutcome {
            total_utility: 0.0,
            utilities: vec![0.0; m_all],
            reward: vec![0.0; m_all],
            nodes: vec![None; m_all],
            iterations: 0,
            converged: true,
        };
        if active.is_empty() {
            return Ok(out);
        }
        let sub = Scenario {
            tasks: active.iter().map(|&m| self.catalog[self.mu[m] as usize - 1]).collect(),
            rates: active.iter().map(|&m| self.scenario.rates[m]).collect(),
            fleet: self.scenario.fleet.clone(),
            channel: self.scenario.channel.clone(),
        };
        let sub_ratios = active.iter().map(|&m| ratios[m]).collect();
        let econ = self.params.econ;
        let ctx = GameContext::with_ratios(&sub, econ, sub_ratios)?;
        let k = sub.fleet.n_cn();
        let game = run_game(
            &ctx,
            self.params.arbitration,
            self.slot,
            self.params.max_iters.unwrap_or_else(|| default_max_iters(active.len(), k)),
        )?;
        out.iterations = game.iterations;
        out.converged = game.converged;
        for (i, &m) in active.iter().enumerate() {
            let s = game.profile.strategies[i];
            let u = ctx.utility(i, &s)?;
            let full = if s.node == 0 {
                Strategy::ES
            } else {
                Strategy::cn(s.node, 1.0, 1.0)
            };
            let u_full = sub.utility(i, &full, &econ)?;
            out.nodes[m] = Some(s.node);
            if u.is_finite() {
                out.utilities[m] = u;
                out.reward[m] = u - u_full;
            } else {
                out.utilities[m] = u_full;
                out.reward[m] = -10.0 * u_full.abs();
            }
        }
        out.total_utility = out.utilities.iter().sum();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(m: usize, k: usize) -> EnvParams {
        EnvParams {
            scenario: ScenarioParams {
                n_subsystems: m,
                n_cn: k,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn grid_roundtrip() {
        assert_eq!(decode_action(0), (0.0, 0.0));
        assert_eq!(decode_action(120), (1.0, 1.0));
        assert_eq!(decode_action(encode_action(3, 7)), (0.3, 0.7));
        assert_eq!(project_beta(&[0.5, 0.25]), vec![0.5, 0.25]);
        assert_eq!(project_beta(&[1.0, 1.0, 2.0]), vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn full_offloading_action_earns_zero() {
        let mut env = OrraEnv::new(small(1, 2), 3, 0).unwrap();
        env.set_mu(vec![1]).unwrap();
        let r = env.ratios(&[encode_action(10, 10)]);
        assert_eq!(r, vec![Some((1.0, 1.0))]);
        let out = env.evaluate(&r).unwrap();
        assert_eq!(out.reward, vec![0.0]);
    }

    #[test]
    fn split_offloading_beats_full_offloading() {
        let mut env = OrraEnv::new(small(1, 2), 3, 0).unwrap();
        env.set_mu(vec![2]).unwrap();
        let r = env.ratios(&[encode_action(5, 10)]);
        let out = env.evaluate(&r).unwrap();
        assert!(out.nodes[0].unwrap() > 0);
        assert!(out.total_reward() > 0.0);
    }

    #[test]
    fn idle_and_mec_slots() {
        let mut env = OrraEnv::new(small(3, 2), 1, 0).unwrap();
        env.set_mu(vec![0, 0, 0]).unwrap();
        let out = env.evaluate(&[Some((0.5, 0.3)); 3]).unwrap();
        assert_eq!(out.total_utility, 0.0);
        env.set_mu(vec![1, 0, 2]).unwrap();
        let out = env.evaluate(&[None; 3]).unwrap();
        let want = -0.3 * (env.catalog()[0].cycles + env.catalog()[1].cycles) / 1e9;
        assert!((out.total_utility - want).abs() < 1e-12);
        assert_eq!(out.reward, vec![0.0; 3]);
    }

    #[test]
    fn beta_projection_over_active_only() {
        let mut env = OrraEnv::new(small(3, 2), 1, 0).unwrap();
        env.set_mu(vec![1, 0, 1]).unwrap();
        let a = [encode_action(5, 10), encode_action(5, 10), encode_action(0, 4)];
        let r = env.ratios(&a);
        assert_eq!(r[0], Some((0.5, 1.0 / 1.4)));
        assert_eq!(r[1], None);
        assert_eq!(r[2], None);
    }

    #[test]
    fn request_process_is_seeded_and_in_range() {
        let mut a = OrraEnv::new(small(5, 2), 1, 42).unwrap();
        let mut b = OrraEnv::new(small(5, 2), 1, 42).unwrap();
        for _ in 0..50 {
            a.advance();
            b.advance();
            assert_eq!(a.mu(), b.mu());
            assert!(a.mu().iter().all(|&v| v <= 3));
        }
        let s = a.state();
        let mut c = OrraEnv::from_state(s).unwrap();
        a.advance();
        c.advance();
        assert_eq!(a.mu(), c.mu());
        assert_eq!(a.scenario(), c.scenario());
    }
}
