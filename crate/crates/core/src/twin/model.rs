//! Transition, control and observation factors of the twin.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::plant::{
    interpolate, table_one_rows, table_two_actions, ControlAction, InterpolatedPoint,
    ObservationVector, PlantStateTable, NUM_ANCHORS, NUM_PARAMS,
};
use super::TwinError;

/// `(stage at t-1, stage at t)` key used by the control table and the
/// scaling-factor schedule. Stages above 4 are power operation.
pub type StatePair = (usize, usize);

/// Stage index used in pair keys; every operational state is stage 5.
fn stage(d: usize) -> usize {
    d.min(NUM_ANCHORS)
}

/// Pair key under which digital state `d` carries its scaling factor.
pub fn state_pair(d: usize) -> StatePair {
    match d {
        0 => (0, 0),
        1..=4 => (d - 1, d),
        _ => (NUM_ANCHORS, d),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEntry {
    pub pair: [usize; 2],
    pub kappa: f64,
}

/// Scenario parameters for the twin, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwinConfig {
    pub anchors: Vec<ObservationVector>,
    pub controls: Vec<ControlAction>,
    pub stay_prob: f64,
    pub advance_prob: f64,
    pub n_operational: usize,
    pub kappa_schedule: Vec<KappaEntry>,
    pub n_steps: usize,
    pub epsilon: f64,
    pub kappa_floor: f64,
    pub variance_floor: f64,
    /// Relative half-width of the point-mass band used when kappa is floored.
    pub band_tolerance: f64,
    /// Per-parameter likelihood outside the band.
    pub band_outside: f64,
    /// Number of equally likely calibration observations.
    pub calibration_obs_count: usize,
}

impl Default for TwinConfig {
    fn default() -> Self {
        let mut kappa_schedule = vec![
            KappaEntry { pair: [0, 0], kappa: 3.5 },
            KappaEntry { pair: [0, 1], kappa: 2.5 },
            KappaEntry { pair: [1, 2], kappa: 2.0 },
            KappaEntry { pair: [2, 3], kappa: 2.5 },
            KappaEntry { pair: [3, 4], kappa: 1.0 },
        ];
        for j in 5..=10 {
            kappa_schedule.push(KappaEntry { pair: [5, j], kappa: 0.0 });
        }
        Self {
            anchors: table_one_rows().to_vec(),
            controls: table_two_actions(),
            stay_prob: 0.4,
            advance_prob: 0.6,
            n_operational: 6,
            kappa_schedule,
            n_steps: 10,
            epsilon: 0.05,
            kappa_floor: 1e-3,
            variance_floor: 1e-4,
            band_tolerance: 0.01,
            band_outside: 1e-6,
            calibration_obs_count: 6,
        }
    }
}

impl TwinConfig {
    pub fn n_states(&self) -> usize {
        NUM_ANCHORS + self.n_operational
    }

    pub fn validate(&self) -> Result<(), TwinError> {
        if (self.stay_prob + self.advance_prob - 1.0).abs() > 1e-9
            || self.stay_prob < 0.0
            || self.advance_prob < 0.0
        {
            return Err(TwinError::InvalidConfig(
                "stay_prob and advance_prob must be non-negative and sum to 1".into(),
            ));
        }
        if self.controls.len() < NUM_ANCHORS + 1 {
            return Err(TwinError::InvalidConfig(format!(
                "need at least {} control actions",
                NUM_ANCHORS + 1
            )));
        }
        if !(self.kappa_floor > 0.0) || !(self.variance_floor > 0.0) {
            return Err(TwinError::InvalidConfig(
                "kappa_floor and variance_floor must be positive".into(),
            ));
        }
        if !(self.epsilon >= 0.0) {
            return Err(TwinError::InvalidConfig("epsilon must be non-negative".into()));
        }
        if self.kappa_schedule.iter().any(|k| !(k.kappa >= 0.0)) {
            return Err(TwinError::InvalidConfig("negative scaling factor".into()));
        }
        Ok(())
    }

    fn kappa_for(&self, d: usize) -> f64 {
        let (a, b) = state_pair(d);
        self.kappa_schedule
            .iter()
            .find(|k| k.pair == [a, b])
            .map(|k| k.kappa)
            .unwrap_or(1.0)
    }
}

/// Banded state transition matrix plus the control conditional table.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    matrix: Vec<Vec<f64>>,
    cpt: BTreeMap<(StatePair, StatePair, usize), f64>,
    n_actions: usize,
}

impl TransitionModel {
    pub fn new(n_states: usize, stay: f64, advance: f64, n_actions: usize) -> Self {
        let mut matrix = vec![vec![0.0; n_states]; n_states];
        for (i, row) in matrix.iter_mut().enumerate() {
            if i + 1 < n_states {
                row[i] = stay;
                row[i + 1] = advance;
            } else {
                row[i] = 1.0;
            }
        }
        let mut cpt = BTreeMap::new();
        for i in 0..NUM_ANCHORS {
            cpt.insert(((i, i), (i, i), i), 0.4);
            cpt.insert(((i, i), (i, i + 1), i + 1), 0.6);
        }
        for i in 0..NUM_ANCHORS - 1 {
            cpt.insert(((i, i + 1), (i, i + 1), i + 1), 0.1);
            cpt.insert(((i, i + 1), (i + 1, i + 1), i + 1), 0.4);
        }
        let op = NUM_ANCHORS;
        cpt.insert(((op - 1, op), (op, op), op), 0.4);
        cpt.insert(((op, op), (op, op), op), 1.0);
        Self {
            matrix,
            cpt,
            n_actions,
        }
    }

    pub fn n_states(&self) -> usize {
        self.matrix.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn transition_prob(&self, from: usize, to: usize) -> Result<f64, TwinError> {
        let len = self.n_states();
        for index in [from, to] {
            if index >= len {
                return Err(TwinError::StateOutOfRange { index, len });
            }
        }
        Ok(self.matrix[from][to])
    }

    /// Table lookup of `P(U = u | S_{t-1}, S_t)`; unlisted combinations are 0.
    pub fn control_likelihood(
        &self,
        prev: StatePair,
        next: StatePair,
        u: usize,
    ) -> Result<f64, TwinError> {
        if u >= self.n_actions {
            return Err(TwinError::ActionOutOfRange {
                index: u,
                len: self.n_actions,
            });
        }
        Ok(self.cpt.get(&(prev, next, u)).copied().unwrap_or(0.0))
    }

    /// Uniform prior over control actions.
    pub fn control_prior(&self) -> f64 {
        1.0 / self.n_actions as f64
    }

    /// Control-table weight for the digital transition `a -> b`.
    pub fn control_weight(&self, a: usize, b: usize, u: usize) -> f64 {
        let (sa, sb) = (stage(a), stage(b));
        self.cpt
            .get(&((sa, sa), (sa, sb), u))
            .copied()
            .unwrap_or(0.0)
    }

    /// `P(d_t | d_{t-1}, u)`: matrix times control weight, renormalised per
    /// source state. A source with zero normaliser keeps its state.
    pub fn action_kernel(&self, u: usize) -> Result<Vec<Vec<f64>>, TwinError> {
        if u >= self.n_actions {
            return Err(TwinError::ActionOutOfRange {
                index: u,
                len: self.n_actions,
            });
        }
        let n = self.n_states();
        let mut kernel = vec![vec![0.0; n]; n];
        for a in 0..n {
            let weights: Vec<f64> = (0..n)
                .map(|b| self.matrix[a][b] * self.control_weight(a, b, u))
                .collect();
            let z: f64 = weights.iter().sum();
            if z > 0.0 {
                for b in 0..n {
                    kernel[a][b] = weights[b] / z;
                }
            } else {
                kernel[a][a] = 1.0;
            }
        }
        Ok(kernel)
    }

    /// Joint control evidence for the most likely action from state `d`:
    /// `Σ_b P(b | d) · P(u | d, b)`.
    pub fn action_support(&self, d: usize, u: usize) -> f64 {
        (0..self.n_states())
            .map(|b| self.matrix[d][b] * self.control_weight(d, b, u))
            .sum()
    }

    /// Action with the largest support from `d`; lowest id wins ties.
    pub fn most_likely_action(&self, d: usize) -> usize {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for u in 0..self.n_actions {
            let v = self.action_support(d, u);
            if v > best_val {
                best = u;
                best_val = v;
            }
        }
        best
    }
}

/// Per-state Gaussian observation factor with stage-dependent scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    means: Vec<[f64; NUM_PARAMS]>,
    variances: Vec<[f64; NUM_PARAMS]>,
    kappas: Vec<f64>,
    kappa_floor: f64,
    band_tolerance: f64,
    band_outside: f64,
}

impl ObservationModel {
    /// Means and sample variances per label from the interpolated dataset.
    /// States without interpolated rows reuse the final anchor's statistics.
    pub fn from_dataset(
        points: &[InterpolatedPoint],
        config: &TwinConfig,
    ) -> Result<Self, TwinError> {
        let n_states = config.n_states();
        let mut means = Vec::with_capacity(n_states);
        let mut variances = Vec::with_capacity(n_states);
        for label in 0..NUM_ANCHORS {
            let rows: Vec<[f64; NUM_PARAMS]> = points
                .iter()
                .filter(|p| p.label == label)
                .map(|p| p.obs.to_array())
                .collect();
            if rows.is_empty() {
                return Err(TwinError::InvalidTable(format!(
                    "no interpolated rows carry label {label}"
                )));
            }
            let count = rows.len() as f64;
            let mut mean = [0.0; NUM_PARAMS];
            let mut var = [0.0; NUM_PARAMS];
            for p in 0..NUM_PARAMS {
                mean[p] = rows.iter().map(|r| r[p]).sum::<f64>() / count;
                let ss: f64 = rows.iter().map(|r| (r[p] - mean[p]).powi(2)).sum();
                var[p] = if rows.len() > 1 { ss / (count - 1.0) } else { 0.0 };
                var[p] = var[p].max(config.variance_floor);
            }
            means.push(mean);
            variances.push(var);
        }
        let last_anchor = config.anchors[NUM_ANCHORS - 1].to_array();
        let last_var = variances[NUM_ANCHORS - 1];
        for _ in NUM_ANCHORS..n_states {
            means.push(last_anchor);
            variances.push(last_var);
        }
        let kappas = (0..n_states).map(|d| config.kappa_for(d)).collect();
        Ok(Self {
            means,
            variances,
            kappas,
            kappa_floor: config.kappa_floor,
            band_tolerance: config.band_tolerance,
            band_outside: config.band_outside,
        })
    }

    pub fn n_states(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, d: usize) -> ObservationVector {
        ObservationVector::from_array(self.means[d])
    }

    pub fn variance(&self, d: usize) -> [f64; NUM_PARAMS] {
        self.variances[d]
    }

    pub fn kappa(&self, d: usize) -> f64 {
        self.kappas[d]
    }

    /// Whether state `d` uses the tolerance-band point mass.
    pub fn is_point_mass(&self, d: usize) -> bool {
        self.kappas[d] <= self.kappa_floor
    }

    /// Effective variance `σ² / √κ` with κ floored.
    pub fn effective_variance(&self, d: usize) -> [f64; NUM_PARAMS] {
        let k = self.kappas[d].max(self.kappa_floor).sqrt();
        self.variances[d].map(|v| v / k)
    }

    pub fn log_likelihood(&self, o: &ObservationVector, d: usize) -> Result<f64, TwinError> {
        if d >= self.n_states() {
            return Err(TwinError::StateOutOfRange {
                index: d,
                len: self.n_states(),
            });
        }
        let x = o.to_array();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TwinError::InvalidObservation("non-finite parameter".into()));
        }
        let mu = &self.means[d];
        if self.is_point_mass(d) {
            let outside = (0..NUM_PARAMS)
                .filter(|&p| (x[p] - mu[p]).abs() > self.band_tolerance * mu[p].abs().max(1.0))
                .count();
            return Ok(outside as f64 * self.band_outside.ln());
        }
        let var = self.effective_variance(d);
        let mut ll = 0.0;
        for p in 0..NUM_PARAMS {
            let z = x[p] - mu[p];
            ll += -0.5 * (2.0 * std::f64::consts::PI * var[p]).ln() - z * z / (2.0 * var[p]);
        }
        Ok(ll)
    }

    pub fn likelihood(&self, o: &ObservationVector, d: usize) -> Result<f64, TwinError> {
        self.log_likelihood(o, d).map(f64::exp)
    }

    pub fn log_likelihoods(&self, o: &ObservationVector) -> Result<Vec<f64>, TwinError> {
        (0..self.n_states()).map(|d| self.log_likelihood(o, d)).collect()
    }

    /// Label of the state whose mean is nearest to `o` in standardised
    /// distance; used to bucket quantities of interest.
    pub fn nearest_state(&self, o: &ObservationVector) -> usize {
        let x = o.to_array();
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for d in 0..self.n_states() {
            let dist: f64 = (0..NUM_PARAMS)
                .map(|p| (x[p] - self.means[d][p]).powi(2) / self.variances[d][p].max(1.0))
                .sum();
            if dist < best_dist {
                best = d;
                best_dist = dist;
            }
        }
        best
    }
}

/// The assembled twin: dataset, factors and control configurations.
#[derive(Debug, Clone)]
pub struct TwinModel {
    pub config: TwinConfig,
    pub table: PlantStateTable,
    pub dataset: Vec<InterpolatedPoint>,
    pub transition: TransitionModel,
    pub observation: ObservationModel,
    kernels: Vec<Vec<Vec<f64>>>,
}

impl TwinModel {
    pub fn build(config: TwinConfig) -> Result<Self, TwinError> {
        config.validate()?;
        let table = PlantStateTable::new(config.anchors.clone(), config.n_steps)?;
        let dataset = interpolate(&table)?;
        let transition = TransitionModel::new(
            config.n_states(),
            config.stay_prob,
            config.advance_prob,
            config.controls.len(),
        );
        let observation = ObservationModel::from_dataset(&dataset, &config)?;
        let kernels = (0..transition.n_actions())
            .map(|u| transition.action_kernel(u))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            config,
            table,
            dataset,
            transition,
            observation,
            kernels,
        })
    }

    pub fn standard() -> Self {
        Self::build(TwinConfig::default()).expect("default twin configuration is valid")
    }

    pub fn n_states(&self) -> usize {
        self.transition.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.transition.n_actions()
    }

    pub fn kernel(&self, u: usize) -> &[Vec<f64>] {
        &self.kernels[u]
    }

    /// Observation prior over successor rows: uniform over the calibration
    /// rows, uniform over the operational rows beyond S4.
    pub fn observation_prior(&self, d: usize) -> f64 {
        if d < NUM_ANCHORS {
            1.0 / self.config.calibration_obs_count as f64
        } else {
            1.0 / self.config.n_operational.max(1) as f64
        }
    }
}
