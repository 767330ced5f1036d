//! End-to-end calibration and operation run of the twin against a simulated
//! plant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::filter::{assimilate_log, entropy, propagate, StateBelief};
use super::model::TwinModel;
use super::planner::Policy;
use super::plant::{ObservationVector, NUM_ANCHORS, NUM_PARAMS};
use super::reward::RewardBreakdown;
use super::TwinError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwinRunConfig {
    /// Last operation step; calibration always covers t = 0..=4.
    pub t_p: usize,
    pub seed: u64,
    /// Std-dev of additive Gaussian noise on operation observations.
    pub obs_noise: f64,
    pub gamma: f64,
}

impl Default for TwinRunConfig {
    fn default() -> Self {
        Self {
            t_p: 14,
            seed: 0,
            obs_noise: 0.0,
            gamma: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Calibration,
    Operation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinStepRecord {
    pub t: usize,
    pub phase: Phase,
    pub true_state: usize,
    pub estimate: usize,
    pub belief: Vec<f64>,
    pub observation: ObservationVector,
    /// Control activated at this step.
    pub control: usize,
    /// `P(D_t | D_{t-1})` at the true state.
    pub p_prev: Option<f64>,
    /// `P(D_t, U_{t-1} | D_{t-1}, O_t)` at the true state and applied control.
    pub p_control_obs: Option<f64>,
    /// Posterior of the true `(D_{t-1}, D_t)` pair given `O_t`.
    pub p_pair: Option<f64>,
    pub entropy: f64,
    pub reward: RewardBreakdown,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinTrajectory {
    pub records: Vec<TwinStepRecord>,
    pub policy: Policy,
}

impl TwinTrajectory {
    pub fn calibration(&self) -> impl Iterator<Item = &TwinStepRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Calibration)
    }

    pub fn operation(&self) -> impl Iterator<Item = &TwinStepRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Operation)
    }

    /// Mean of `P(D_t, U_{t-1} | D_{t-1}, O_t)` over the rows of a phase that
    /// carry the metric.
    pub fn mean_p_control_obs(&self, phase: Phase) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.phase == phase)
            .filter_map(|r| r.p_control_obs)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

struct Metrics {
    p_prev: f64,
    p_control_obs: f64,
    p_pair: f64,
}

fn query_metrics(
    model: &TwinModel,
    prev: &StateBelief,
    ll: &[f64],
    control_prob: f64,
    applied: usize,
    true_prev: usize,
    true_state: usize,
) -> Result<Metrics, TwinError> {
    let m = model.transition.matrix();
    let p_prev = propagate(prev, m)?.probs()[true_state];
    let pred = propagate(prev, model.kernel(applied))?;
    let post_u = assimilate_log(&pred, ll).map(|b| b.probs()[true_state]).unwrap_or(0.0);

    let lmax = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut hit = 0.0;
    for (a, &pa) in prev.probs().iter().enumerate() {
        for (b, &mab) in m[a].iter().enumerate() {
            let w = pa * mab * (ll[b] - lmax).exp();
            z += w;
            if a == true_prev && b == true_state {
                hit = w;
            }
        }
    }
    Ok(Metrics {
        p_prev,
        p_control_obs: control_prob * post_u,
        p_pair: if z > 0.0 { hit / z } else { 0.0 },
    })
}

fn noisy(o: &ObservationVector, sd: f64, rng: &mut ChaCha8Rng) -> ObservationVector {
    if sd <= 0.0 {
        return *o;
    }
    let mut x = o.to_array();
    for v in x.iter_mut().take(NUM_PARAMS) {
        let z: f64 = rng.sample(StandardNormal);
        *v += sd * z;
    }
    x[NUM_PARAMS - 1] = x[NUM_PARAMS - 1].clamp(0.0, 100.0);
    ObservationVector::from_array(x)
}

fn sample(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn assimilate_or_keep(pred: &StateBelief, ll: &[f64]) -> Result<(StateBelief, bool), TwinError> {
    match assimilate_log(pred, ll) {
        Ok(b) => Ok((b, false)),
        Err(TwinError::DegenerateEvidence) => Ok((pred.clone(), true)),
        Err(e) => Err(e),
    }
}

/// Calibrates on the anchor rows for t = 0..=4, then runs the planned
/// policy against a sampled plant for t = 5..=t_p.
pub fn run_twin(model: &TwinModel, cfg: &TwinRunConfig) -> Result<TwinTrajectory, TwinError> {
    let policy = model.plan(cfg.gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = model.n_states();
    let uniform_control = model.transition.control_prior();
    let mut records = Vec::new();

    let mut belief = StateBelief::uniform(n);
    let mut control = 0;
    let mut true_state = 0;
    for t in 0..NUM_ANCHORS {
        let obs = model.table.rows()[t];
        let ll = model.observation.log_likelihoods(&obs)?;
        let prev = belief.clone();
        let pred = if t == 0 {
            prev.clone()
        } else {
            propagate(&prev, model.kernel(control))?
        };
        let (post, degenerate) = assimilate_or_keep(&pred, &ll)?;
        let metrics = if t == 0 {
            None
        } else {
            Some(query_metrics(model, &prev, &ll, uniform_control, control, true_state, t)?)
        };
        true_state = t;
        let estimate = post.argmax();
        control = model.transition.most_likely_action(estimate);
        records.push(record(
            model, t, Phase::Calibration, true_state, &post, obs, control, metrics, degenerate,
        )?);
        belief = post;
    }

    for t in NUM_ANCHORS..=cfg.t_p {
        let next_true = sample(&model.kernel(control)[true_state], &mut rng);
        let obs = noisy(&model.observation.mean(next_true), cfg.obs_noise, &mut rng);
        let ll = model.observation.log_likelihoods(&obs)?;
        let prev = belief.clone();
        let pred = propagate(&prev, model.kernel(control))?;
        let (post, degenerate) = assimilate_or_keep(&pred, &ll)?;
        let metrics = query_metrics(model, &prev, &ll, 1.0, control, true_state, next_true)?;
        true_state = next_true;
        let estimate = post.argmax();
        control = policy.action(estimate, model.bucket(&obs));
        records.push(record(
            model,
            t,
            Phase::Operation,
            true_state,
            &post,
            obs,
            control,
            Some(metrics),
            degenerate,
        )?);
        belief = post;
    }
    Ok(TwinTrajectory { records, policy })
}

#[allow(clippy::too_many_arguments)]
fn record(
    model: &TwinModel,
    t: usize,
    phase: Phase,
    true_state: usize,
    post: &StateBelief,
    observation: ObservationVector,
    control: usize,
    metrics: Option<Metrics>,
    degenerate: bool,
) -> Result<TwinStepRecord, TwinError> {
    let estimate = post.argmax();
    Ok(TwinStepRecord {
        t,
        phase,
        true_state,
        estimate,
        belief: post.probs().to_vec(),
        observation,
        control,
        p_prev: metrics.as_ref().map(|m| m.p_prev),
        p_control_obs: metrics.as_ref().map(|m| m.p_control_obs),
        p_pair: metrics.as_ref().map(|m| m.p_pair),
        entropy: entropy(post),
        reward: model.reward_breakdown(estimate, control)?,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_walks_s0_to_s4_with_u1_to_u5() {
        let m = TwinModel::standard();
        let tr = run_twin(&m, &TwinRunConfig::default()).unwrap();
        let cal: Vec<_> = tr.calibration().collect();
        assert_eq!(cal.len(), 5);
        assert_eq!(cal.iter().map(|r| r.estimate).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(cal.iter().map(|r| r.control).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert!(cal[0].p_control_obs.is_none());
        assert!(cal.iter().all(|r| !r.degenerate));
    }

    #[test]
    fn operation_holds_u5_and_beats_calibration_trend() {
        let m = TwinModel::standard();
        let tr = run_twin(&m, &TwinRunConfig::default()).unwrap();
        assert_eq!(tr.operation().count(), 10);
        assert!(tr.operation().all(|r| r.control == 5));
        let cal = tr.mean_p_control_obs(Phase::Calibration).unwrap();
        let op = tr.mean_p_control_obs(Phase::Operation).unwrap();
        assert!(op > cal, "operation {op} vs calibration {cal}");
    }

    #[test]
    fn empty_operation_window() {
        let m = TwinModel::standard();
        let cfg = TwinRunConfig { t_p: 4, ..Default::default() };
        let tr = run_twin(&m, &cfg).unwrap();
        assert_eq!(tr.operation().count(), 0);
        assert_eq!(tr.records.len(), 5);
    }

    #[test]
    fn same_seed_same_run() {
        let m = TwinModel::standard();
        let cfg = TwinRunConfig { seed: 9, obs_noise: 0.5, ..Default::default() };
        assert_eq!(run_twin(&m, &cfg).unwrap(), run_twin(&m, &cfg).unwrap());
    }
}
