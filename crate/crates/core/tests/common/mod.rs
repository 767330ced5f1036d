//! Exact reference computations shared by test targets.
#![allow(dead_code)]

use cointwin::twin::{step_update, value_iteration, Mdp, StateBelief};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn q(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

/// Row of dyadic weights normalised in f64; the values are exact in f64.
pub fn dyadic_row<R: Rng>(rng: &mut R, n: usize, allow_zero: bool) -> Vec<f64> {
    loop {
        let w: Vec<u32> = (0..n).map(|_| rng.random_range(if allow_zero { 0..5 } else { 1..5 })).collect();
        let s: u32 = w.iter().sum();
        if s.is_power_of_two() {
            return w.iter().map(|&x| x as f64 / s as f64).collect();
        }
    }
}

/// Posterior of the last state by summing over every state path.
pub fn enumerate_paths(
    prior: &[BigRational],
    kernels: &[Vec<Vec<BigRational>>],
    likelihoods: &[Vec<BigRational>],
) -> Vec<BigRational> {
    let n = prior.len();
    let steps = kernels.len();
    let mut post = vec![BigRational::zero(); n];
    for code in 0..n.pow(steps as u32 + 1) {
        let path: Vec<usize> = (0..=steps).map(|t| (code / n.pow(t as u32)) % n).collect();
        let mut w = prior[path[0]].clone();
        for t in 0..steps {
            w *= &kernels[t][path[t]][path[t + 1]];
            w *= &likelihoods[t][path[t + 1]];
        }
        post[path[steps]] += w;
    }
    let z: BigRational = post.iter().cloned().sum();
    post.into_iter().map(|p| p / &z).collect()
}

/// Largest absolute gap between repeated `step_update` and path enumeration
/// over random 3-state chains of 1 to 4 steps.
pub fn filter_max_error(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let steps = rng.random_range(1..=4);
        let prior = dyadic_row(&mut rng, 3, true);
        let kernels: Vec<Vec<Vec<f64>>> =
            (0..steps).map(|_| (0..3).map(|_| dyadic_row(&mut rng, 3, true)).collect()).collect();
        let lik: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..3).map(|_| rng.random_range(1..=64) as f64 / 64.0).collect())
            .collect();

        let mut b = StateBelief::new(prior.clone()).unwrap();
        for t in 0..steps {
            let ll: Vec<f64> = lik[t].iter().map(|l| l.ln()).collect();
            b = step_update(&b, &kernels[t], &ll).unwrap();
        }

        let exact = enumerate_paths(
            &prior.iter().map(|&x| q(x)).collect::<Vec<_>>(),
            &kernels
                .iter()
                .map(|k| k.iter().map(|r| r.iter().map(|&x| q(x)).collect()).collect())
                .collect::<Vec<_>>(),
            &lik.iter().map(|l| l.iter().map(|&x| q(x)).collect()).collect::<Vec<_>>(),
        );
        for (got, want) in b.probs().iter().zip(&exact) {
            worst = worst.max((got - want.to_f64().unwrap()).abs());
        }
    }
    worst
}

/// Solves (I − γ P_π) v = r_π exactly.
pub fn policy_value(mdp: &Mdp, policy: &[usize], gamma: &BigRational) -> Vec<BigRational> {
    let n = mdp.n_states();
    let mut a: Vec<Vec<BigRational>> = (0..n)
        .map(|s| {
            let mut row: Vec<BigRational> = (0..n)
                .map(|t| -gamma * q(mdp.transitions[policy[s]][s][t]))
                .collect();
            row[s] += BigRational::one();
            row.push(q(mdp.rewards[s][policy[s]]));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).find(|&r| !a[r][c].is_zero()).expect("nonsingular");
        a.swap(c, p);
        let piv = a[c][c].clone();
        for x in a[c].iter_mut() {
            *x /= &piv;
        }
        for r in 0..n {
            if r != c && !a[r][c].is_zero() {
                let f = a[r][c].clone();
                for k in 0..=n {
                    let d = &f * &a[c][k];
                    a[r][k] -= d;
                }
            }
        }
    }
    a.into_iter().map(|row| row[n].clone()).collect()
}

/// Value iteration at γ = 0.6 against the best of all deterministic
/// policies; also checks the residual sequence is non-increasing after the
/// first sweep.
pub fn check_against_enumeration(mdp: &Mdp) -> Result<(), String> {
    let gamma = 0.6;
    let gq = q(gamma);
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut best: Option<Vec<BigRational>> = None;
    for code in 0..na.pow(n as u32) {
        let pol: Vec<usize> = (0..n).map(|s| (code / na.pow(s as u32)) % na).collect();
        let v = policy_value(mdp, &pol, &gq);
        best = Some(match best {
            None => v,
            Some(b) => b.into_iter().zip(v).map(|(x, y)| if y > x { y } else { x }).collect(),
        });
    }
    let best = best.unwrap();
    let plan = value_iteration(mdp, gamma, 1e-13, 10_000).map_err(|e| e.to_string())?;
    for (v, b) in plan.values.iter().zip(&best) {
        if (v - b.to_f64().unwrap()).abs() >= 1e-9 {
            return Err(format!("value {v} vs optimum {b}"));
        }
    }
    // ties within the greedy tolerance may pick either action
    for (v, b) in policy_value(mdp, &plan.policy, &gq).iter().zip(&best) {
        if (v - b).abs().to_f64().unwrap() >= 1e-9 {
            return Err(format!("policy {:?} is not optimal", plan.policy));
        }
    }
    for w in plan.residuals.windows(2).skip(1) {
        if w[1] > w[0] * (1.0 + 1e-12) {
            return Err(format!("residuals rose: {:?}", plan.residuals));
        }
    }
    Ok(())
}

/// Every deterministic-transition 2- and 3-state 2-action MDP (random
/// integer rewards) plus 300 stochastic ones per size. Returns how many
/// were checked.
pub fn check_toy_mdps(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0;
    for n in [2usize, 3] {
        for code in 0..n.pow(2 * n as u32) {
            let succ: Vec<usize> = (0..2 * n).map(|i| (code / n.pow(i as u32)) % n).collect();
            let transitions = (0..2)
                .map(|a| {
                    (0..n)
                        .map(|s| (0..n).map(|t| if succ[a * n + s] == t { 1.0 } else { 0.0 }).collect())
                        .collect()
                })
                .collect();
            let rewards = (0..n)
                .map(|_| (0..2).map(|_| rng.random_range(-4..=4) as f64).collect())
                .collect();
            check_against_enumeration(&Mdp { transitions, rewards })?;
            count += 1;
        }
        for _ in 0..300 {
            let transitions = (0..2)
                .map(|_| (0..n).map(|_| dyadic_row(&mut rng, n, true)).collect())
                .collect();
            let rewards = (0..n)
                .map(|_| (0..2).map(|_| rng.random_range(-16..=16) as f64 / 4.0).collect())
                .collect();
            check_against_enumeration(&Mdp { transitions, rewards })?;
            count += 1;
        }
    }
    Ok(count)
}
