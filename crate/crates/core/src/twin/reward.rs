//! Piecewise control, state and observation rewards.

use serde::{Deserialize, Serialize};

use super::TwinError;

const BRANCH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_control: f64,
    pub r_state: f64,
    pub r_obs: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(r_control: f64, r_state: f64, r_obs: f64) -> Self {
        Self {
            r_control,
            r_state,
            r_obs,
            total: r_state + r_control + r_obs,
        }
    }
}

/// Deviation from `baseline`, `zero_value` at ψ = 0, `baseline` at ψ = baseline.
fn piecewise(psi: f64, baseline: f64, zero_value: f64) -> f64 {
    if psi.abs() <= BRANCH_TOL {
        zero_value
    } else if (psi - baseline).abs() <= BRANCH_TOL {
        baseline
    } else {
        (baseline - psi).abs()
    }
}

fn mean_of(psis: &[f64], f: impl Fn(f64) -> f64) -> Result<f64, TwinError> {
    if psis.is_empty() {
        return Err(TwinError::EmptyConfiguration);
    }
    Ok(psis.iter().map(|&p| f(p)).sum::<f64>() / psis.len() as f64)
}

/// Control reward over `k = psis.len()` configurations with baseline `1/n`.
pub fn reward_control(psis: &[f64], n: usize, epsilon: f64) -> Result<f64, TwinError> {
    if n == 0 {
        return Err(TwinError::EmptyConfiguration);
    }
    let base = 1.0 / n as f64;
    mean_of(psis, |p| piecewise(p, base, -epsilon))
}

/// State-transition reward with baseline probability 1.
pub fn reward_state(psis: &[f64]) -> Result<f64, TwinError> {
    mean_of(psis, |p| piecewise(p, 1.0, -1.0))
}

/// Observation-prediction reward with baseline `1/n` and a fixed −0.1 penalty.
pub fn reward_obs(psis: &[f64], n: usize) -> Result<f64, TwinError> {
    if n == 0 {
        return Err(TwinError::EmptyConfiguration);
    }
    let base = 1.0 / n as f64;
    mean_of(psis, |p| piecewise(p, base, -0.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_branches() {
        let n = 5;
        assert!((reward_control(&[0.2, 0.2], n, 0.05).unwrap() - 0.2).abs() < 1e-15);
        assert!((reward_control(&[0.0, 0.0], n, 0.05).unwrap() + 0.05).abs() < 1e-15);
        let v = reward_control(&[0.3, 0.0], n, 0.05).unwrap();
        assert!((v - 0.025).abs() < 1e-15);
        assert_eq!(reward_control(&[], n, 0.05), Err(TwinError::EmptyConfiguration));
    }

    #[test]
    fn state_branches() {
        assert_eq!(reward_state(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(reward_state(&[0.0]).unwrap(), -1.0);
        assert!((reward_state(&[1.0, 0.4, 0.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!((reward_state(&[0.7]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn obs_branches() {
        let sixth = 1.0 / 6.0;
        assert!((reward_obs(&[sixth; 3], 6).unwrap() - sixth).abs() < 1e-15);
        assert!((reward_obs(&[0.0, 0.0], 6).unwrap() + 0.1).abs() < 1e-15);
        assert!((reward_obs(&[sixth, 0.5], 6).unwrap() - 0.25).abs() < 1e-15);
        assert!((reward_obs(&[0.9], 6).unwrap() - (0.9 - sixth)).abs() < 1e-15);
    }

    #[test]
    fn breakdown_total() {
        let b = RewardBreakdown::new(0.1, 0.2, -0.05);
        assert!((b.total - 0.25).abs() < 1e-15);
    }
}
