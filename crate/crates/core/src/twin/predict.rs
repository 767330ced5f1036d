//! Forward prediction of the digital state under a fixed control policy.

use super::filter::{assimilate_log, StateBelief};
use super::model::TwinModel;
use super::planner::Policy;
use super::plant::ObservationVector;
use super::reward::RewardBreakdown;
use super::TwinError;

/// Action-conditioned dynamics with a per-state reward.
pub trait Dynamics {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn kernel(&self, u: usize) -> &[Vec<f64>];
    fn reward(&self, d: usize, u: usize) -> Result<RewardBreakdown, TwinError>;
}

impl Dynamics for TwinModel {
    fn n_states(&self) -> usize {
        TwinModel::n_states(self)
    }

    fn n_actions(&self) -> usize {
        TwinModel::n_actions(self)
    }

    fn kernel(&self, u: usize) -> &[Vec<f64>] {
        TwinModel::kernel(self, u)
    }

    fn reward(&self, d: usize, u: usize) -> Result<RewardBreakdown, TwinError> {
        self.reward_breakdown(d, u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStep {
    pub belief: StateBelief,
    /// Most probable action taken out of the previous belief.
    pub action: Option<usize>,
    pub action_dist: Vec<f64>,
    /// Belief-weighted reward of the actions taken.
    pub reward: RewardBreakdown,
}

fn controlled_step<D: Dynamics>(
    dyn_: &D,
    belief: &StateBelief,
    policy: &Policy,
) -> Result<(StateBelief, Vec<f64>, RewardBreakdown), TwinError> {
    let n = dyn_.n_states();
    if belief.len() != n || policy.n_states() != n {
        return Err(TwinError::InvalidBelief(format!(
            "belief/policy size does not match {n} states"
        )));
    }
    let mut next = vec![0.0; n];
    let mut dist = vec![0.0; dyn_.n_actions()];
    let (mut rc, mut rs, mut ro) = (0.0, 0.0, 0.0);
    for (d, &p) in belief.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let u = policy.action(d, d);
        if u >= dyn_.n_actions() {
            return Err(TwinError::ActionOutOfRange {
                index: u,
                len: dyn_.n_actions(),
            });
        }
        dist[u] += p;
        for (j, k) in dyn_.kernel(u)[d].iter().enumerate() {
            next[j] += p * k;
        }
        let r = dyn_.reward(d, u)?;
        rc += p * r.r_control;
        rs += p * r.r_state;
        ro += p * r.r_obs;
    }
    let next = StateBelief::from_weights(next)?;
    Ok((next, dist, RewardBreakdown::new(rc, rs, ro)))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Rolls the belief `steps` slots ahead with no observations. The first
/// entry is the starting belief.
pub fn predict_forward<D: Dynamics>(
    dyn_: &D,
    belief: &StateBelief,
    policy: &Policy,
    steps: usize,
) -> Result<Vec<PredictionStep>, TwinError> {
    let mut out = vec![PredictionStep {
        belief: belief.clone(),
        action: None,
        action_dist: vec![0.0; dyn_.n_actions()],
        reward: RewardBreakdown::default(),
    }];
    let mut cur = belief.clone();
    for _ in 0..steps {
        let (next, dist, reward) = controlled_step(dyn_, &cur, policy)?;
        out.push(PredictionStep {
            belief: next.clone(),
            action: Some(argmax(&dist)),
            action_dist: dist,
            reward,
        });
        cur = next;
    }
    Ok(out)
}

/// Same rollout with an assimilation step after every prediction.
pub fn predict_with_observations(
    model: &TwinModel,
    belief: &StateBelief,
    policy: &Policy,
    observations: &[ObservationVector],
) -> Result<Vec<PredictionStep>, TwinError> {
    let mut out = predict_forward(model, belief, policy, 0)?;
    let mut cur = belief.clone();
    for o in observations {
        let (pred, dist, reward) = controlled_step(model, &cur, policy)?;
        let ll = model.observation.log_likelihoods(o)?;
        let post = assimilate_log(&pred, &ll)?;
        out.push(PredictionStep {
            belief: post.clone(),
            action: Some(argmax(&dist)),
            action_dist: dist,
            reward,
        });
        cur = post;
    }
    Ok(out)
}
