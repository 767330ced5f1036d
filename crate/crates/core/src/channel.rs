//! Uplink URLLC channel: path loss, Rayleigh fading, SIC SINR,
//! finite-blocklength rate and transmission latency.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    InvalidGeometry(f64),
    #[error("subsystem {0} has a zero channel vector")]
    DegenerateChannel(usize),
    #[error("{0}")]
    Domain(String),
    #[error("destination {0} has a nonzero share but zero rate")]
    Unreachable(usize),
    #[error("subsystem index {index} out of range (have {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid channel parameters: {0}")]
    InvalidConfig(String),
}

/// Large-scale gain for a link of `d` metres, PL(d) = -35.3 - 37.6 log10(d) dB.
pub fn path_loss_gain(d: f64) -> Result<f64, ChannelError> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(ChannelError::InvalidGeometry(d));
    }
    Ok(10f64.powf((-35.3 - 37.6 * d.log10()) / 10.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Side of the square deployment area (m).
    pub area: f64,
    pub n_antennas: usize,
    pub bandwidth_hz: f64,
    pub blocklength: usize,
    pub eps: f64,
    pub noise_dbm_per_hz: f64,
    pub tx_power_w: f64,
    /// Minimum subsystem-to-AP distance (m).
    pub min_distance: f64,
    /// Split the band equally among subsystems instead of sharing it.
    pub orthogonal: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            area: 200.0,
            n_antennas: 8,
            bandwidth_hz: 10e6,
            blocklength: 256,
            eps: 1e-9,
            noise_dbm_per_hz: -174.0,
            tx_power_w: 0.5,
            min_distance: 10.0,
            orthogonal: false,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |s: &str| Err(ChannelError::InvalidConfig(s.into()));
        if self.n_antennas == 0 {
            return bad("n_antennas must be at least 1");
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth must be positive");
        }
        if self.blocklength == 0 {
            return bad("blocklength must be at least 1");
        }
        if !(self.eps > 0.0 && self.eps <= 0.5) {
            return bad("eps must lie in (0, 0.5]");
        }
        if !(self.tx_power_w > 0.0) {
            return bad("transmit power must be positive");
        }
        if !(self.area > 0.0) || !(self.min_distance > 0.0) || self.min_distance >= self.area / 2.0
        {
            return bad("area and min_distance must be positive with min_distance < area/2");
        }
        Ok(())
    }

    /// Bandwidth seen by each subsystem.
    pub fn effective_bandwidth(&self, m: usize) -> f64 {
        if self.orthogonal {
            self.bandwidth_hz / m.max(1) as f64
        } else {
            self.bandwidth_hz
        }
    }

    /// Noise power in W over `bandwidth` Hz.
    pub fn noise_power(&self, bandwidth: f64) -> f64 {
        10f64.powf((self.noise_dbm_per_hz - 30.0) / 10.0) * bandwidth
    }
}

/// One draw of subsystem positions and channel vectors to a single AP at
/// the centre of the area.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `h[m]` is subsystem m's L-dimensional channel vector.
    pub h: Vec<Vec<Complex64>>,
    pub g: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub ap: [f64; 2],
    pub n0: f64,
    pub bandwidth: f64,
    pub blocklength: usize,
    pub eps: f64,
}

impl ChannelRealization {
    pub fn generate<R: Rng + ?Sized>(
        params: &ChannelParams,
        m: usize,
        rng: &mut R,
    ) -> Result<Self, ChannelError> {
        params.validate()?;
        let ap = [params.area / 2.0, params.area / 2.0];
        let mut positions = Vec::with_capacity(m);
        let mut g = Vec::with_capacity(m);
        let mut h = Vec::with_capacity(m);
        for _ in 0..m {
            let (pos, d) = loop {
                let p = [rng.random::<f64>() * params.area, rng.random::<f64>() * params.area];
                let d = ((p[0] - ap[0]).powi(2) + (p[1] - ap[1]).powi(2)).sqrt();
                if d >= params.min_distance {
                    break (p, d);
                }
            };
            let gain = path_loss_gain(d)?;
            let scale = (gain / 2.0).sqrt();
            let v = (0..params.n_antennas)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re * scale, im * scale)
                })
                .collect();
            positions.push(pos);
            g.push(gain);
            h.push(v);
        }
        let bandwidth = params.effective_bandwidth(m);
        Ok(Self {
            h,
            g,
            positions,
            ap,
            n0: params.noise_power(bandwidth),
            bandwidth,
            blocklength: params.blocklength,
            eps: params.eps,
        })
    }

    pub fn n_subsystems(&self) -> usize {
        self.h.len()
    }

    pub fn norm_sqr(&self, m: usize) -> f64 {
        self.h[m].iter().map(|c| c.norm_sqr()).sum()
    }

    /// Uplink rate of every subsystem under `cfg`.
    pub fn rates(&self, cfg: &TransmitConfig) -> Result<Vec<f64>, ChannelError> {
        (0..self.n_subsystems())
            .map(|m| {
                let gamma = sinr(m, cfg, self)?;
                urllc_rate(gamma, self.bandwidth, self.blocklength, self.eps)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitConfig {
    pub p: Vec<f64>,
    /// SIC decode order; earlier entries see interference from later ones.
    pub ordering: Vec<usize>,
}

impl TransmitConfig {
    /// Strongest channel decoded first.
    pub fn sic(ch: &ChannelRealization, p: Vec<f64>) -> Self {
        let mut ordering: Vec<usize> = (0..ch.n_subsystems()).collect();
        ordering.sort_by(|&a, &b| ch.norm_sqr(b).total_cmp(&ch.norm_sqr(a)).then(a.cmp(&b)));
        Self { p, ordering }
    }

    pub fn validate(&self, m: usize) -> Result<(), ChannelError> {
        if self.p.len() != m || self.p.iter().any(|&p| !(p > 0.0)) {
            return Err(ChannelError::InvalidConfig(
                "need one positive power per subsystem".into(),
            ));
        }
        let mut seen = vec![false; m];
        for &i in &self.ordering {
            if i >= m || std::mem::replace(&mut seen[i], true) {
                return Err(ChannelError::InvalidConfig(
                    "ordering must be a permutation".into(),
                ));
            }
        }
        if self.ordering.len() != m {
            return Err(ChannelError::InvalidConfig("ordering must be a permutation".into()));
        }
        Ok(())
    }
}

/// SINR of subsystem `m` with interference from everyone decoded after it.
pub fn sinr(m: usize, cfg: &TransmitConfig, ch: &ChannelRealization) -> Result<f64, ChannelError> {
    let len = ch.n_subsystems();
    if m >= len {
        return Err(ChannelError::IndexOutOfRange { index: m, len });
    }
    cfg.validate(len)?;
    let hm = &ch.h[m];
    let nm = ch.norm_sqr(m);
    if nm == 0.0 {
        return Err(ChannelError::DegenerateChannel(m));
    }
    let pos = cfg.ordering.iter().position(|&i| i == m).unwrap_or(len);
    let interference: f64 = cfg.ordering[pos + 1..]
        .iter()
        .map(|&n| {
            let ip: Complex64 = hm.iter().zip(&ch.h[n]).map(|(a, b)| a.conj() * b).sum();
            cfg.p[n] * ip.norm_sqr() / nm
        })
        .sum();
    Ok(cfg.p[m] * nm / (interference + ch.n0))
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of the Gaussian tail probability by bisection.
pub fn q_inv(eps: f64) -> Result<f64, ChannelError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ChannelError::Domain(format!("q_inv needs eps in (0,1), got {eps}")));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if q_function(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (ql, qh) = (q_function(lo) - eps, q_function(hi) - eps);
    Ok(if ql.abs() <= qh.abs() { lo } else { hi })
}

/// Finite-blocklength achievable rate in bits/s, floored at 0.
pub fn urllc_rate(gamma: f64, bandwidth: f64, n: usize, eps: f64) -> Result<f64, ChannelError> {
    if n == 0 {
        return Err(ChannelError::Domain("blocklength must be at least 1".into()));
    }
    if !(gamma >= 0.0) {
        return Err(ChannelError::Domain(format!("SINR must be non-negative, got {gamma}")));
    }
    let v = 1.0 - (1.0 + gamma).powi(-2);
    let shannon = bandwidth * (1.0 + gamma).log2();
    let penalty = bandwidth * (v / n as f64).sqrt() * q_inv(eps)? / std::f64::consts::LN_2;
    Ok((shannon - penalty).max(0.0))
}

/// Time to ship `bits` split over destinations by `ratios` at `rates`.
pub fn tx_latency(ratios: &[f64], bits: f64, rates: &[f64]) -> Result<f64, ChannelError> {
    if ratios.len() != rates.len() {
        return Err(ChannelError::Domain("ratios and rates differ in length".into()));
    }
    let mut worst = 0.0f64;
    for (j, (&phi, &w)) in ratios.iter().zip(rates).enumerate() {
        if !(0.0..=1.0).contains(&phi) {
            return Err(ChannelError::Domain(format!("ratio {phi} outside [0,1]")));
        }
        if phi == 0.0 {
            continue;
        }
        if !(w > 0.0) {
            return Err(ChannelError::Unreachable(j));
        }
        worst = worst.max(phi * bits / w);
    }
    Ok(worst)
}
