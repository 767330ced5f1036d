//! Multiuser offloading game: best-response dynamics over exclusive CNs,
//! the potential function and a Nash-equilibrium certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::offload::{Economics, OffloadError, OffloadProfile, Scenario, Strategy};

const IMPROVE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error(transparent)]
    Offload(#[from] OffloadError),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("ratios: {0}")]
    InvalidRatios(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arbitration {
    #[default]
    Random,
    RoundRobin,
}

/// A scenario plus the (λ, β) each subsystem would use on a CN; `None`
/// keeps that subsystem on the edge server.
#[derive(Debug, Clone)]
pub struct GameContext<'a> {
    pub scenario: &'a Scenario,
    pub econ: Economics,
    ratios: Vec<Option<(f64, f64)>>,
}

impl<'a> GameContext<'a> {
    /// λ = 0.5 and an equal share of CN budget for everyone.
    pub fn with_default_ratios(scenario: &'a Scenario, econ: Economics) -> Self {
        let m = scenario.n_subsystems();
        Self {
            scenario,
            econ,
            ratios: vec![Some((0.5, 1.0 / m as f64)); m],
        }
    }

    /// Edge server only.
    pub fn mec_only(scenario: &'a Scenario, econ: Economics) -> Self {
        Self {
            scenario,
            econ,
            ratios: vec![None; scenario.n_subsystems()],
        }
    }

    pub fn with_ratios(
        scenario: &'a Scenario,
        econ: Economics,
        ratios: Vec<Option<(f64, f64)>>,
    ) -> Result<Self, GameError> {
        if ratios.len() != scenario.n_subsystems() {
            return Err(GameError::InvalidRatios("one (lambda, beta) per subsystem".into()));
        }
        if ratios
            .iter()
            .flatten()
            .any(|&(l, b)| !(l > 0.0 && l <= 1.0 && b > 0.0 && b <= 1.0))
        {
            return Err(GameError::InvalidRatios("entries must lie in (0, 1]".into()));
        }
        let total: f64 = ratios.iter().flatten().map(|r| r.1).sum();
        if total > 1.0 + 1e-12 {
            return Err(GameError::InvalidRatios(format!("beta sums to {total}")));
        }
        Ok(Self {
            scenario,
            econ,
            ratios,
        })
    }

    pub fn n_subsystems(&self) -> usize {
        self.scenario.n_subsystems()
    }

    pub fn n_cn(&self) -> usize {
        self.scenario.fleet.n_cn()
    }

    pub fn ratios(&self, m: usize) -> Option<(f64, f64)> {
        self.ratios[m]
    }

    /// Strategy of `m` on `node` (0 = ES, or no CN share configured).
    pub fn strategy(&self, m: usize, node: usize) -> Strategy {
        match self.ratios[m] {
            Some((l, b)) if node > 0 => Strategy::cn(node, l, b),
            _ => Strategy::ES,
        }
    }

    /// Utility of `m` playing `s`; −∞ when the deadline rule fails.
    pub fn utility(&self, m: usize, s: &Strategy) -> Result<f64, GameError> {
        if !self.scenario.feasible(m, s)? {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(self.scenario.utility(m, s, &self.econ)?)
    }

    /// Nodes `m` may choose given everyone else: ES and every CN not held
    /// by another subsystem, ascending.
    pub fn options(&self, m: usize, profile: &OffloadProfile) -> Vec<usize> {
        if self.ratios[m].is_none() {
            return vec![0];
        }
        let mut taken = vec![false; self.n_cn() + 1];
        for (i, s) in profile.strategies.iter().enumerate() {
            if i != m && s.node > 0 {
                taken[s.node] = true;
            }
        }
        (0..=self.n_cn()).filter(|&j| j == 0 || !taken[j]).collect()
    }

    fn check(&self, profile: &OffloadProfile) -> Result<(), GameError> {
        if profile.strategies.len() != self.n_subsystems() {
            return Err(GameError::InvalidProfile("size mismatch".into()));
        }
        let mut used = vec![false; self.n_cn() + 1];
        for s in &profile.strategies {
            s.validate(self.n_cn())?;
            if s.node > 0 && std::mem::replace(&mut used[s.node], true) {
                return Err(GameError::InvalidProfile(format!("CN {} shared", s.node)));
            }
        }
        Ok(())
    }
}

/// Sum of every subsystem's utility.
pub fn potential(ctx: &GameContext, profile: &OffloadProfile) -> Result<f64, GameError> {
    ctx.check(profile)?;
    profile
        .strategies
        .iter()
        .enumerate()
        .map(|(m, s)| ctx.utility(m, s))
        .sum()
}

/// Utility-maximising node for `m`; ES wins ties, then the lowest CN.
pub fn best_response(
    ctx: &GameContext,
    m: usize,
    profile: &OffloadProfile,
) -> Result<Strategy, GameError> {
    let mut best = Strategy::ES;
    let mut best_u = ctx.utility(m, &best)?;
    for node in ctx.options(m, profile).into_iter().skip(1) {
        let s = ctx.strategy(m, node);
        let u = ctx.utility(m, &s)?;
        if u > best_u + IMPROVE_TOL * best_u.abs().max(1.0) {
            best = s;
            best_u = u;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub iteration: usize,
    pub mover: usize,
    pub old: Strategy,
    pub new: Strategy,
    pub delta_u: f64,
    pub delta_phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameOutcome {
    pub profile: OffloadProfile,
    /// Slots played, including the final quiet one.
    pub iterations: usize,
    pub potential_trace: Vec<f64>,
    pub moves: Vec<MoveRecord>,
    pub converged: bool,
}

impl GameOutcome {
    pub fn total_utility(&self) -> f64 {
        *self.potential_trace.last().unwrap_or(&f64::NAN)
    }
}

pub fn default_max_iters(m: usize, k: usize) -> usize {
    10 * m * (k + 1)
}

/// Best-response dynamics from all-ES. Each slot every subsystem with a
/// strictly better reply contends and one winner moves.
pub fn run_game(
    ctx: &GameContext,
    arbitration: Arbitration,
    seed: u64,
    max_iters: usize,
) -> Result<GameOutcome, GameError> {
    let m = ctx.n_subsystems();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profile = OffloadProfile::all_es(m);
    let mut phi = potential(ctx, &profile)?;
    let mut trace = vec![phi];
    let mut moves = Vec::new();
    let mut pointer = 0;
    for iteration in 1..=max_iters {
        let mut contenders = Vec::new();
        for i in 0..m {
            let cur = profile.strategies[i];
            let br = best_response(ctx, i, &profile)?;
            let gain = ctx.utility(i, &br)? - ctx.utility(i, &cur)?;
            if br != cur && gain > IMPROVE_TOL {
                contenders.push((i, br, gain));
            }
        }
        if contenders.is_empty() {
            return Ok(GameOutcome {
                profile,
                iterations: iteration,
                potential_trace: trace,
                moves,
                converged: true,
            });
        }
        let pick = match arbitration {
            Arbitration::Random => rng.random_range(0..contenders.len()),
            Arbitration::RoundRobin => contenders
                .iter()
                .position(|c| c.0 >= pointer)
                .unwrap_or(0),
        };
        let (mover, new, delta_u) = contenders[pick];
        pointer = (mover + 1) % m;
        let old = std::mem::replace(&mut profile.strategies[mover], new);
        let next_phi = potential(ctx, &profile)?;
        moves.push(MoveRecord {
            iteration,
            mover,
            old,
            new,
            delta_u,
            delta_phi: next_phi - phi,
        });
        phi = next_phi;
        trace.push(phi);
    }
    Ok(GameOutcome {
        profile,
        iterations: max_iters,
        potential_trace: trace,
        moves,
        converged: false,
    })
}

/// No subsystem can gain more than `tol` by switching to any open node.
pub fn is_nash_equilibrium(
    ctx: &GameContext,
    profile: &OffloadProfile,
    tol: f64,
) -> Result<bool, GameError> {
    ctx.check(profile)?;
    for (m, s) in profile.strategies.iter().enumerate() {
        let u = ctx.utility(m, s)?;
        for node in ctx.options(m, profile) {
            if ctx.utility(m, &ctx.strategy(m, node))? > u + tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpgReport {
    /// Deviations between the edge server and a CN.
    pub es_cn: usize,
    /// Deviations between two CNs.
    pub cn_cn: usize,
    pub identity: usize,
    /// Skipped because one side misses its deadline.
    pub skipped: usize,
    pub failures: usize,
    pub max_rel_err: f64,
}

impl EpgReport {
    pub fn checked(&self) -> usize {
        self.es_cn + self.cn_cn + self.identity
    }
}

/// Random feasible profile respecting CN exclusivity.
pub fn random_profile<R: Rng + ?Sized>(ctx: &GameContext, rng: &mut R) -> OffloadProfile {
    let mut profile = OffloadProfile::all_es(ctx.n_subsystems());
    for m in 0..ctx.n_subsystems() {
        let opts = ctx.options(m, &profile);
        let node = opts[rng.random_range(0..opts.len())];
        profile.strategies[m] = ctx.strategy(m, node);
    }
    profile
}

/// Checks φ(s) − φ(s') = U_m(s) − U_m(s') for every unilateral deviation
/// from `trials` random profiles.
pub fn verify_epg(ctx: &GameContext, trials: usize, seed: u64) -> Result<EpgReport, GameError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = EpgReport::default();
    for _ in 0..trials {
        let base = random_profile(ctx, &mut rng);
        check_deviations(ctx, &base, &mut rep)?;
    }
    Ok(rep)
}

/// Every profile that respects CN exclusivity.
pub fn all_profiles(ctx: &GameContext) -> Vec<OffloadProfile> {
    fn rec(ctx: &GameContext, m: usize, cur: &mut OffloadProfile, out: &mut Vec<OffloadProfile>) {
        if m == ctx.n_subsystems() {
            out.push(cur.clone());
            return;
        }
        let mut nodes = vec![0];
        if ctx.ratios(m).is_some() {
            nodes.extend(
                (1..=ctx.n_cn()).filter(|&j| cur.strategies[..m].iter().all(|s| s.node != j)),
            );
        }
        for j in nodes {
            cur.strategies[m] = ctx.strategy(m, j);
            rec(ctx, m + 1, cur, out);
        }
        cur.strategies[m] = Strategy::ES;
    }
    let mut out = Vec::new();
    rec(ctx, 0, &mut OffloadProfile::all_es(ctx.n_subsystems()), &mut out);
    out
}

fn check_deviations(
    ctx: &GameContext,
    base: &OffloadProfile,
    rep: &mut EpgReport,
) -> Result<(), GameError> {
    let phi = potential(ctx, base)?;
    for m in 0..ctx.n_subsystems() {
        let s = base.strategies[m];
        let u = ctx.utility(m, &s)?;
        for node in ctx.options(m, base) {
            let s2 = ctx.strategy(m, node);
            let mut dev = base.clone();
            dev.strategies[m] = s2;
            let phi2 = potential(ctx, &dev)?;
            let u2 = ctx.utility(m, &s2)?;
            if !(phi.is_finite() && phi2.is_finite()) {
                rep.skipped += 1;
                continue;
            }
            match (s.node, s2.node) {
                (a, b) if a == b => rep.identity += 1,
                (0, _) | (_, 0) => rep.es_cn += 1,
                _ => rep.cn_cn += 1,
            }
            let (lhs, rhs) = (phi - phi2, u - u2);
            let err = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0);
            rep.max_rel_err = rep.max_rel_err.max(err);
            if err > 1e-9 {
                rep.failures += 1;
            }
        }
    }
    Ok(())
}

/// The deviation check over every profile of the instance.
pub fn verify_epg_exhaustive(ctx: &GameContext) -> Result<EpgReport, GameError> {
    let mut rep = EpgReport::default();
    for p in all_profiles(ctx) {
        check_deviations(ctx, &p, &mut rep)?;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offload::{ComputeFleet, ScenarioParams, Task};
    use crate::channel::ChannelParams;

    fn scenario(m: usize, k: usize, seed: u64) -> Scenario {
        let p = ScenarioParams {
            n_subsystems: m,
            n_cn: k,
            ..Default::default()
        };
        Scenario::generate(&p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn hand_scenario(cn: Vec<f64>, tasks: Vec<Task>) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = tasks.len();
        let channel =
            crate::channel::ChannelRealization::generate(&ChannelParams::default(), m, &mut rng)
                .unwrap();
        Scenario {
            rates: vec![1e8; m],
            tasks,
            fleet: ComputeFleet { cn, es: 30e9, dev: 0.02 },
            channel,
        }
    }

    #[test]
    fn all_es_potential_is_sum_of_es_utilities() {
        let sc = scenario(4, 3, 2);
        let ctx = GameContext::with_default_ratios(&sc, Economics::default());
        let phi = potential(&ctx, &OffloadProfile::all_es(4)).unwrap();
        let want: f64 = sc.tasks.iter().map(|t| -0.3 * t.cycles / 1e9).sum();
        assert!((phi - want).abs() < 1e-12);
    }

    #[test]
    fn free_cn_is_taken() {
        let t = Task::new(8e6, 1e9, 0.015).unwrap();
        let sc = hand_scenario(vec![10e9], vec![t]);
        let econ = Economics { gain: 2.5, price_per_10ghz: 0.0 };
        let ctx = GameContext::with_default_ratios(&sc, econ);
        let br = best_response(&ctx, 0, &OffloadProfile::all_es(1)).unwrap();
        assert_eq!(br.node, 1);
        let out = run_game(&ctx, Arbitration::Random, 0, 10).unwrap();
        assert!(out.converged && out.iterations <= 2);
        assert!((out.total_utility() - ctx.utility(0, &br).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn occupied_cn_forecloses_switch() {
        let t = Task::new(8e6, 1e9, 0.015).unwrap();
        let sc = hand_scenario(vec![10e9], vec![t, t]);
        let econ = Economics { gain: 2.5, price_per_10ghz: 0.0 };
        let ctx = GameContext::with_default_ratios(&sc, econ);
        let mut p = OffloadProfile::all_es(2);
        p.strategies[0] = ctx.strategy(0, 1);
        assert_eq!(best_response(&ctx, 1, &p).unwrap(), Strategy::ES);
    }

    #[test]
    fn two_by_two_matches_enumeration() {
        for seed in 0..20 {
            let sc = scenario(2, 2, seed);
            let ctx = GameContext::with_default_ratios(&sc, Economics::default());
            let p = random_profile(&ctx, &mut ChaCha8Rng::seed_from_u64(seed));
            for m in 0..2 {
                let br = best_response(&ctx, m, &p).unwrap();
                let other = p.strategies[1 - m].node;
                let best = (0..=2)
                    .filter(|&j| j == 0 || j != other)
                    .map(|j| ctx.utility(m, &ctx.strategy(m, j)).unwrap())
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((ctx.utility(m, &br).unwrap() - best).abs() <= 1e-12 * best.abs().max(1.0));
            }
        }
    }

    #[test]
    fn four_by_three_reaches_certified_equilibrium() {
        for seed in 0..25 {
            let sc = scenario(4, 3, seed);
            let ctx = GameContext::with_default_ratios(&sc, Economics::default());
            for arb in [Arbitration::Random, Arbitration::RoundRobin] {
                let out = run_game(&ctx, arb, seed, default_max_iters(4, 3)).unwrap();
                assert!(out.converged);
                assert!(is_nash_equilibrium(&ctx, &out.profile, 1e-9).unwrap());
                for w in out.potential_trace.windows(2) {
                    assert!(w[1] > w[0]);
                }
                sc.check_constraints(&out.profile).unwrap();
            }
        }
    }

    #[test]
    fn deviation_equality_holds() {
        let sc = scenario(3, 2, 11);
        let ctx = GameContext::with_default_ratios(&sc, Economics::default());
        let rep = verify_epg(&ctx, 30, 5).unwrap();
        assert_eq!(rep.failures, 0);
        assert!(rep.es_cn > 0 && rep.cn_cn > 0 && rep.identity > 0);
    }

    #[test]
    fn rejects_bad_ratios_and_profiles() {
        let sc = scenario(2, 1, 0);
        assert!(GameContext::with_ratios(&sc, Economics::default(), vec![Some((0.5, 0.6)); 2]).is_err());
        assert!(GameContext::with_ratios(&sc, Economics::default(), vec![Some((0.0, 0.1)); 2]).is_err());
        let ctx = GameContext::with_default_ratios(&sc, Economics::default());
        let mut p = OffloadProfile::all_es(2);
        p.strategies[0] = ctx.strategy(0, 1);
        p.strategies[1] = ctx.strategy(1, 1);
        assert!(potential(&ctx, &p).is_err());
    }

    #[test]
    fn profile_enumeration_counts() {
        // 2 subsystems, 2 CNs: (ES|1|2) x (ES|other free) = 1*3 + 2*2 = 7
        let sc = scenario(2, 2, 0);
        let ctx = GameContext::with_default_ratios(&sc, Economics::default());
        assert_eq!(all_profiles(&ctx).len(), 7);
        let rep = verify_epg_exhaustive(&ctx).unwrap();
        assert_eq!(rep.failures, 0);
        // options include the current node: (ES,ES) 3+3, four one-CN profiles 2+3, two two-CN 2+2
        assert_eq!(rep.checked() + rep.skipped, 6 + 4 * 5 + 2 * 4);
    }

    #[test]
    fn mec_only_has_no_cn_options() {
        let sc = scenario(5, 3, 4);
        let ctx = GameContext::mec_only(&sc, Economics::default());
        let out = run_game(&ctx, Arbitration::RoundRobin, 0, 100).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.profile, OffloadProfile::all_es(5));
        let want: f64 = sc.tasks.iter().map(|t| -0.3 * t.cycles / 1e9).sum();
        assert!((out.total_utility() - want).abs() < 1e-12);
    }
}
