//! Discrete belief propagation and Bayesian assimilation.

use serde::{Deserialize, Serialize};

use super::TwinError;

const SUM_TOL: f64 = 1e-9;

/// Probability distribution over digital states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBelief(Vec<f64>);

impl StateBelief {
    pub fn new(probs: Vec<f64>) -> Result<Self, TwinError> {
        if probs.is_empty() {
            return Err(TwinError::InvalidBelief("empty belief".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(TwinError::InvalidBelief("negative or non-finite entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(TwinError::InvalidBelief(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        Self(v)
    }

    /// Normalises non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, TwinError> {
        let z: f64 = weights.iter().sum();
        if !(z > 0.0) || !z.is_finite() {
            return Err(TwinError::DegenerateEvidence);
        }
        Ok(Self(weights.into_iter().map(|w| w / z).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Shannon entropy in nats.
pub fn entropy(belief: &StateBelief) -> f64 {
    -belief
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Predictive belief `bᵀ K` for a row-stochastic kernel.
pub fn propagate(belief: &StateBelief, kernel: &[Vec<f64>]) -> Result<StateBelief, TwinError> {
    let n = belief.len();
    if kernel.len() != n || kernel.iter().any(|r| r.len() != n) {
        return Err(TwinError::InvalidBelief(format!(
            "kernel shape does not match belief of length {n}"
        )));
    }
    let mut out = vec![0.0; n];
    for (i, &p) in belief.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (j, &k) in kernel[i].iter().enumerate() {
            out[j] += p * k;
        }
    }
    let z: f64 = out.iter().sum();
    Ok(StateBelief(out.into_iter().map(|x| x / z).collect()))
}

/// Bayes rule with a likelihood vector; the evidence term is the normaliser.
pub fn assimilate(belief: &StateBelief, likelihood: &[f64]) -> Result<StateBelief, TwinError> {
    if likelihood.len() != belief.len() {
        return Err(TwinError::InvalidBelief("likelihood length mismatch".into()));
    }
    if likelihood.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(TwinError::InvalidObservation("likelihood must be finite and non-negative".into()));
    }
    let weights: Vec<f64> = belief
        .probs()
        .iter()
        .zip(likelihood)
        .map(|(p, l)| p * l)
        .collect();
    StateBelief::from_weights(weights)
}

/// Bayes rule in the log domain; shifts by the largest supported
/// log-likelihood so sharp densities do not underflow.
pub fn assimilate_log(
    belief: &StateBelief,
    log_likelihood: &[f64],
) -> Result<StateBelief, TwinError> {
    if log_likelihood.len() != belief.len() {
        return Err(TwinError::InvalidBelief("likelihood length mismatch".into()));
    }
    let shift = belief
        .probs()
        .iter()
        .zip(log_likelihood)
        .filter(|(p, _)| **p > 0.0)
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(TwinError::DegenerateEvidence);
    }
    let weights: Vec<f64> = belief
        .probs()
        .iter()
        .zip(log_likelihood)
        .map(|(p, l)| if *p > 0.0 { p * (l - shift).exp() } else { 0.0 })
        .collect();
    StateBelief::from_weights(weights)
}

/// One filtering step: propagate through the dynamics, then assimilate.
pub fn step_update(
    belief: &StateBelief,
    kernel: &[Vec<f64>],
    log_likelihood: &[f64],
) -> Result<StateBelief, TwinError> {
    let predicted = propagate(belief, kernel)?;
    assimilate_log(&predicted, log_likelihood)
}
