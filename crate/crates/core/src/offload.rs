//! Computation model: node latencies with twin-estimate gaps, end-to-end
//! latency and per-subsystem utility.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{tx_latency, ChannelError, ChannelParams, ChannelRealization, TransmitConfig};

pub const BITS_PER_MB: f64 = 8e6;
pub const CYCLES_PER_GCYCLE: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OffloadError {
    #[error("node rate {f} must exceed its twin deviation {f_tilde}")]
    InvalidDeviation { f: f64, f_tilde: f64 },
    #[error("ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("CN {node} out of range (have {len})")]
    NodeOutOfRange { node: usize, len: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub bits: f64,
    pub cycles: f64,
    pub t_max: f64,
}

impl Task {
    pub fn new(bits: f64, cycles: f64, t_max: f64) -> Result<Self, OffloadError> {
        if !(bits > 0.0) || !(cycles > 0.0) || !(t_max > 0.0) {
            return Err(OffloadError::InvalidTask(format!(
                "bits={bits}, cycles={cycles}, t_max={t_max} must all be positive"
            )));
        }
        Ok(Self { bits, cycles, t_max })
    }

    /// Cycles per bit.
    pub fn eta(&self) -> f64 {
        self.cycles / self.bits
    }
}

/// Estimated latency, the twin gap, and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeLatency {
    pub estimated: f64,
    pub gap: f64,
    pub actual: f64,
}

fn node_latency(cycles: f64, ratio: f64, f: f64, f_tilde: f64) -> Result<NodeLatency, OffloadError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(OffloadError::InvalidRatio(ratio));
    }
    if !(f > f_tilde) || f_tilde < 0.0 {
        return Err(OffloadError::InvalidDeviation { f, f_tilde });
    }
    let work = ratio * cycles;
    Ok(NodeLatency {
        estimated: work / f,
        gap: work * f_tilde / (f * (f - f_tilde)),
        actual: work / (f - f_tilde),
    })
}

/// Latency of the `lambda` share processed on a CN running at `f_cn`.
pub fn cn_latency(task: &Task, lambda: f64, f_cn: f64, f_tilde: f64) -> Result<NodeLatency, OffloadError> {
    node_latency(task.cycles, lambda, f_cn, f_tilde)
}

/// Latency of the `aleph` share processed on the edge server.
pub fn es_latency(task: &Task, aleph: f64, f_em: f64, f_tilde: f64) -> Result<NodeLatency, OffloadError> {
    node_latency(task.cycles, aleph, f_em, f_tilde)
}

/// CN capacities and the edge server, all in cycles/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeFleet {
    pub cn: Vec<f64>,
    pub es: f64,
    /// Twin deviation as a fraction of the serving rate.
    pub dev: f64,
}

impl ComputeFleet {
    pub fn validate(&self) -> Result<(), OffloadError> {
        if self.cn.iter().chain([&self.es]).any(|&f| !(f > 0.0)) {
            return Err(OffloadError::InvalidScenario("capacities must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.dev) {
            return Err(OffloadError::InvalidScenario(format!(
                "dev {} outside [0, 0.5)",
                self.dev
            )));
        }
        Ok(())
    }

    pub fn n_cn(&self) -> usize {
        self.cn.len()
    }

    fn capacity(&self, node: usize) -> Result<f64, OffloadError> {
        match node {
            0 => Ok(self.es),
            k => self.cn.get(k - 1).copied().ok_or(OffloadError::NodeOutOfRange {
                node: k,
                len: self.cn.len(),
            }),
        }
    }
}

/// One subsystem's decision: node 0 is the edge server, node k is CN k.
/// On a CN, `lambda` is processed there with rate share `beta` and the rest
/// goes to the edge server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub node: usize,
    pub lambda: f64,
    pub beta: f64,
}

impl Strategy {
    pub const ES: Strategy = Strategy {
        node: 0,
        lambda: 0.0,
        beta: 0.0,
    };

    pub fn cn(node: usize, lambda: f64, beta: f64) -> Self {
        Self { node, lambda, beta }
    }

    pub fn aleph(&self) -> f64 {
        1.0 - self.lambda
    }

    pub fn validate(&self, n_cn: usize) -> Result<(), OffloadError> {
        if self.node == 0 {
            if self.lambda != 0.0 || self.beta != 0.0 {
                return Err(OffloadError::Constraint(
                    "edge-server strategy carries CN shares".into(),
                ));
            }
            return Ok(());
        }
        if self.node > n_cn {
            return Err(OffloadError::NodeOutOfRange {
                node: self.node,
                len: n_cn,
            });
        }
        for r in [self.lambda, self.beta] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(OffloadError::InvalidRatio(r));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadProfile {
    pub strategies: Vec<Strategy>,
}

impl OffloadProfile {
    pub fn all_es(m: usize) -> Self {
        Self {
            strategies: vec![Strategy::ES; m],
        }
    }

    /// Builds a profile from per-(m, k) CN ratios. Rejects subsystems that
    /// split over more than one CN.
    pub fn from_ratios(lambda: &[Vec<f64>], beta: &[f64]) -> Result<Self, OffloadError> {
        if lambda.len() != beta.len() {
            return Err(OffloadError::Constraint("lambda and beta differ in length".into()));
        }
        let strategies = lambda
            .iter()
            .zip(beta)
            .enumerate()
            .map(|(m, (row, &b))| {
                let active: Vec<usize> = (0..row.len()).filter(|&k| row[k] != 0.0).collect();
                match active.as_slice() {
                    [] => Ok(Strategy::ES),
                    [k] => Ok(Strategy::cn(k + 1, row[*k], b)),
                    _ => Err(OffloadError::Constraint(format!(
                        "subsystem {m} offloads to {} CNs",
                        active.len()
                    ))),
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { strategies })
    }

    pub fn beta_sum(&self) -> f64 {
        self.strategies.iter().map(|s| s.beta).sum()
    }
}

/// Latency of running the whole task on the edge server.
pub fn full_es_latency(task: &Task, fleet: &ComputeFleet, rate: f64) -> Result<f64, OffloadError> {
    e2e_latency(task, &Strategy::ES, fleet, rate)
}

/// Processing on the CN, uplink transfer and processing on the edge server.
pub fn e2e_latency(
    task: &Task,
    s: &Strategy,
    fleet: &ComputeFleet,
    rate: f64,
) -> Result<f64, OffloadError> {
    s.validate(fleet.n_cn())?;
    let cn = if s.node == 0 {
        0.0
    } else {
        let f = s.beta * fleet.capacity(s.node)?;
        cn_latency(task, s.lambda, f, fleet.dev * f)?.actual
    };
    let tx = tx_latency(&[s.lambda, s.aleph()], task.bits, &[rate, rate])?;
    let es = es_latency(task, s.aleph(), fleet.es, fleet.dev * fleet.es)?.actual;
    Ok(cn + tx + es)
}

/// Latency gain and offloading price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Economics {
    pub gain: f64,
    /// Price per Gcycle for every 10 GHz of node capacity.
    pub price_per_10ghz: f64,
}

impl Default for Economics {
    fn default() -> Self {
        Self {
            gain: 2.5,
            price_per_10ghz: 0.1,
        }
    }
}

impl Economics {
    pub fn price(&self, capacity: f64) -> f64 {
        self.price_per_10ghz * capacity / 1e10
    }
}

/// True when the end-to-end latency meets the deadline or at least does not
/// exceed full edge execution.
pub fn feasible(task: &Task, s: &Strategy, fleet: &ComputeFleet, rate: f64) -> Result<bool, OffloadError> {
    let t = e2e_latency(task, s, fleet, rate)?;
    let t_em = full_es_latency(task, fleet, rate)?;
    Ok(t <= task.t_max.max(t_em) * (1.0 + 1e-12))
}

/// Latency reduction against full edge execution, minus the price of the
/// share sent to the chosen node.
pub fn utility(
    task: &Task,
    s: &Strategy,
    fleet: &ComputeFleet,
    rate: f64,
    econ: &Economics,
) -> Result<f64, OffloadError> {
    let t_em = full_es_latency(task, fleet, rate)?;
    let t = e2e_latency(task, s, fleet, rate)?;
    let (cap, share) = if s.node == 0 {
        (fleet.es, s.aleph())
    } else {
        (fleet.capacity(s.node)?, s.lambda)
    };
    Ok(econ.gain * (t_em - t) - econ.price(cap) * share * task.cycles / CYCLES_PER_GCYCLE)
}

/// Task ranges in MB and Gcycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPreset {
    Default,
    /// Types 1..=3 are data-intensive, 4..=6 compute-intensive; each type
    /// takes one third of its family's range.
    Type(u8),
}

impl TaskPreset {
    /// `(MB range, Gcycle range)`.
    pub fn ranges(&self) -> Result<([f64; 2], [f64; 2]), OffloadError> {
        fn third(r: [f64; 2], i: u8) -> [f64; 2] {
            let w = (r[1] - r[0]) / 3.0;
            [r[0] + w * i as f64, r[0] + w * (i + 1) as f64]
        }
        match *self {
            TaskPreset::Default => Ok(([1.0, 10.0], [0.001, 0.1])),
            TaskPreset::Type(k @ 1..=3) => Ok((third([10.0, 20.0], k - 1), third([0.1, 0.5], k - 1))),
            TaskPreset::Type(k @ 4..=6) => Ok((third([1.0, 5.0], k - 4), third([1.0, 2.0], k - 4))),
            TaskPreset::Type(k) => Err(OffloadError::InvalidScenario(format!(
                "task type {k} outside 1..=6"
            ))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, t_max: f64, rng: &mut R) -> Result<Task, OffloadError> {
        let (mb, gc) = self.ranges()?;
        let bits = rng.random_range(mb[0]..=mb[1]) * BITS_PER_MB;
        let cycles = rng.random_range(gc[0]..=gc[1]) * CYCLES_PER_GCYCLE;
        Task::new(bits, cycles, t_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub n_subsystems: usize,
    pub n_cn: usize,
    pub channel: ChannelParams,
    pub preset: TaskPreset,
    pub cn_capacity_ghz: [f64; 2],
    pub es_capacity_ghz: f64,
    pub dev: f64,
    pub t_max: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_subsystems: 6,
            n_cn: 4,
            channel: ChannelParams::default(),
            preset: TaskPreset::Default,
            cn_capacity_ghz: [1.0, 10.0],
            es_capacity_ghz: 30.0,
            dev: 0.02,
            t_max: 0.015,
        }
    }
}

/// A drawn instance: one task, one uplink rate per subsystem, and the fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub tasks: Vec<Task>,
    pub rates: Vec<f64>,
    pub fleet: ComputeFleet,
    pub channel: ChannelRealization,
}

impl Scenario {
    pub fn generate<R: Rng + ?Sized>(p: &ScenarioParams, rng: &mut R) -> Result<Self, OffloadError> {
        if p.n_subsystems == 0 {
            return Err(OffloadError::InvalidScenario("need at least one subsystem".into()));
        }
        let [lo, hi] = p.cn_capacity_ghz;
        if !(lo > 0.0 && hi >= lo) {
            return Err(OffloadError::InvalidScenario("bad CN capacity range".into()));
        }
        let channel = ChannelRealization::generate(&p.channel, p.n_subsystems, rng)?;
        let tx = TransmitConfig::sic(&channel, vec![p.channel.tx_power_w; p.n_subsystems]);
        let rates = channel.rates(&tx)?;
        let fleet = ComputeFleet {
            cn: (0..p.n_cn).map(|_| rng.random_range(lo..=hi) * 1e9).collect(),
            es: p.es_capacity_ghz * 1e9,
            dev: p.dev,
        };
        fleet.validate()?;
        let tasks = (0..p.n_subsystems)
            .map(|_| p.preset.sample(p.t_max, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            tasks,
            rates,
            fleet,
            channel,
        })
    }

    pub fn n_subsystems(&self) -> usize {
        self.tasks.len()
    }

    pub fn utility(&self, m: usize, s: &Strategy, econ: &Economics) -> Result<f64, OffloadError> {
        utility(&self.tasks[m], s, &self.fleet, self.rates[m], econ)
    }

    pub fn feasible(&self, m: usize, s: &Strategy) -> Result<bool, OffloadError> {
        feasible(&self.tasks[m], s, &self.fleet, self.rates[m])
    }

    /// Checks single-node offloading, exclusive CNs, deadlines and the
    /// shared CN budget.
    pub fn check_constraints(&self, profile: &OffloadProfile) -> Result<(), OffloadError> {
        if profile.strategies.len() != self.n_subsystems() {
            return Err(OffloadError::Constraint("profile size mismatch".into()));
        }
        let mut used = vec![false; self.fleet.n_cn()];
        for (m, s) in profile.strategies.iter().enumerate() {
            s.validate(self.fleet.n_cn())?;
            if s.node > 0 && std::mem::replace(&mut used[s.node - 1], true) {
                return Err(OffloadError::Constraint(format!("CN {} serves two subsystems", s.node)));
            }
            if !self.feasible(m, s)? {
                return Err(OffloadError::Constraint(format!("subsystem {m} misses its deadline")));
            }
        }
        let b = profile.beta_sum();
        if b > 1.0 + 1e-12 {
            return Err(OffloadError::Constraint(format!("CN shares sum to {b}")));
        }
        Ok(())
    }
}
