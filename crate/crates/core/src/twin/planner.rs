//! Finite MDP, value iteration and the twin's control policy.

use serde::{Deserialize, Serialize};

use super::model::TwinModel;
use super::plant::ObservationVector;
use super::reward::{reward_control, reward_obs, reward_state, RewardBreakdown};
use super::TwinError;

/// Finite MDP with per-action transition matrices and state-action rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    /// `transitions[a][s][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
}

impl Mdp {
    pub fn n_states(&self) -> usize {
        self.rewards.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.len()
    }

    fn q_value(&self, values: &[f64], s: usize, a: usize, gamma: f64) -> f64 {
        let future: f64 = self.transitions[a][s]
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum();
        self.rewards[s][a] + gamma * future
    }

    /// Greedy action per state; the lowest action id wins ties.
    pub fn greedy(&self, values: &[f64], gamma: f64) -> Vec<usize> {
        (0..self.n_states())
            .map(|s| {
                let mut best = 0;
                let mut best_q = self.q_value(values, s, 0, gamma);
                for a in 1..self.n_actions() {
                    let q = self.q_value(values, s, a, gamma);
                    if q > best_q + 1e-9 * (1.0 + best_q.abs()) {
                        best = a;
                        best_q = q;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    /// Sup-norm change per sweep.
    pub residuals: Vec<f64>,
}

/// Bellman optimality sweeps until the sup-norm change drops below `tol`.
pub fn value_iteration(
    mdp: &Mdp,
    gamma: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<PlanResult, TwinError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(TwinError::InvalidDiscount(gamma));
    }
    let n = mdp.n_states();
    let mut values = vec![0.0; n];
    let mut residuals = Vec::new();
    for _ in 0..max_sweeps {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..mdp.n_actions())
                    .map(|a| mdp.q_value(&values, s, a, gamma))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let residual = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        residuals.push(residual);
        if residual <= tol {
            let policy = mdp.greedy(&values, gamma);
            return Ok(PlanResult {
                values,
                policy,
                residuals,
            });
        }
    }
    Err(TwinError::NoConvergence {
        sweeps: max_sweeps,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Control policy over (digital state, quantity-of-interest bucket).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    table: Vec<Vec<usize>>,
    pub discount: f64,
}

impl Policy {
    /// Expands a per-state plan over every quantity-of-interest bucket.
    pub fn from_state_plan(plan: &[usize], n_buckets: usize, discount: f64) -> Self {
        Self {
            table: plan.iter().map(|&a| vec![a; n_buckets]).collect(),
            discount,
        }
    }

    pub fn action(&self, state: usize, bucket: usize) -> usize {
        let row = &self.table[state];
        row[bucket.min(row.len() - 1)]
    }

    pub fn n_states(&self) -> usize {
        self.table.len()
    }
}

impl TwinModel {
    /// Reward components of taking `u` in state `d`. The configurations are
    /// the successors reachable from `d` under the transition matrix.
    pub fn reward_breakdown(&self, d: usize, u: usize) -> Result<RewardBreakdown, TwinError> {
        let n_actions = self.n_actions();
        let kernel = self.kernel(u);
        let succ: Vec<usize> = (0..self.n_states())
            .filter(|&b| self.transition.matrix()[d][b] > 0.0)
            .collect();
        let psi_s: Vec<f64> = succ.iter().map(|&b| kernel[d][b]).collect();
        let psi_c: Vec<f64> = succ
            .iter()
            .map(|&b| self.transition.control_weight(d, b, u))
            .collect();
        let psi_o: Vec<f64> = succ
            .iter()
            .map(|&b| kernel[d][b] * self.observation_prior(b))
            .collect();
        Ok(RewardBreakdown::new(
            reward_control(&psi_c, n_actions, self.config.epsilon)?,
            reward_state(&psi_s)?,
            reward_obs(&psi_o, n_actions)?,
        ))
    }

    pub fn planning_mdp(&self) -> Result<Mdp, TwinError> {
        let transitions = (0..self.n_actions())
            .map(|u| self.kernel(u).to_vec())
            .collect();
        let rewards = (0..self.n_states())
            .map(|d| {
                (0..self.n_actions())
                    .map(|u| self.reward_breakdown(d, u).map(|r| r.total))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        Ok(Mdp {
            transitions,
            rewards,
        })
    }

    /// Off-line value-iteration plan.
    pub fn plan(&self, gamma: f64) -> Result<Policy, TwinError> {
        let mdp = self.planning_mdp()?;
        let result = value_iteration(&mdp, gamma, 1e-12, 10_000)?;
        Ok(Policy::from_state_plan(
            &result.policy,
            self.n_states(),
            gamma,
        ))
    }

    /// Quantity-of-interest bucket for an observation.
    pub fn bucket(&self, q: &ObservationVector) -> usize {
        self.observation.nearest_state(q)
    }
}
