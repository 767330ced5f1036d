//! Plant parameters, the startup anchor table and the control input mapping.

use serde::{Deserialize, Serialize};

use super::TwinError;

/// Number of observed plant parameters.
pub const NUM_PARAMS: usize = 6;

/// Column names in observation order.
pub const PARAM_NAMES: [&str; NUM_PARAMS] = ["PL", "RCT", "RCP", "SGP", "SGL", "RP"];

/// Number of anchor stages in the startup procedure (S0..S4).
pub const NUM_ANCHORS: usize = 5;

/// One reading of the six startup milestones.
///
/// Units follow the anchor table: pressurizer level (%), coolant temperature
/// (°C), coolant pressure, steam generator pressure, steam generator level (%)
/// and reactor power (%).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub pl: f64,
    pub rct: f64,
    pub rcp: f64,
    pub sgp: f64,
    pub sgl: f64,
    pub rp: f64,
}

impl ObservationVector {
    pub const fn new(pl: f64, rct: f64, rcp: f64, sgp: f64, sgl: f64, rp: f64) -> Self {
        Self {
            pl,
            rct,
            rcp,
            sgp,
            sgl,
            rp,
        }
    }

    pub fn from_array(v: [f64; NUM_PARAMS]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(&self) -> [f64; NUM_PARAMS] {
        [self.pl, self.rct, self.rcp, self.sgp, self.sgl, self.rp]
    }

    /// Checks finiteness and the reactor power range.
    pub fn validate(&self) -> Result<(), TwinError> {
        if self.to_array().iter().any(|x| !x.is_finite()) {
            return Err(TwinError::InvalidObservation(
                "non-finite parameter".into(),
            ));
        }
        if !(0.0..=100.0).contains(&self.rp) {
            return Err(TwinError::InvalidObservation(format!(
                "reactor power {} outside [0, 100]",
                self.rp
            )));
        }
        Ok(())
    }
}

/// The five startup anchors S0..S4.
pub fn table_one_rows() -> [ObservationVector; NUM_ANCHORS] {
    [
        ObservationVector::new(100.0, 60.0, 27.0, 1.0, 100.0, 0.0),
        ObservationVector::new(100.0, 176.0, 27.0, 1.0, 60.0, 0.0),
        ObservationVector::new(20.0, 176.0, 156.0, 76.6, 100.0, 0.0),
        ObservationVector::new(50.0, 294.0, 157.0, 76.6, 50.0, 2.0),
        ObservationVector::new(50.0, 308.0, 157.0, 76.6, 50.0, 100.0),
    ]
}

/// Anchor rows plus the interpolation resolution between adjacent rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantStateTable {
    rows: Vec<ObservationVector>,
    n_steps: usize,
}

impl PlantStateTable {
    pub fn new(rows: Vec<ObservationVector>, n_steps: usize) -> Result<Self, TwinError> {
        if n_steps == 0 {
            return Err(TwinError::InvalidResolution);
        }
        if rows.len() != NUM_ANCHORS {
            return Err(TwinError::InvalidTable(format!(
                "expected {NUM_ANCHORS} anchor rows, got {}",
                rows.len()
            )));
        }
        for row in &rows {
            row.validate()?;
        }
        if rows[4].rp < rows[3].rp {
            return Err(TwinError::InvalidTable(
                "reactor power must not decrease from S3 to S4".into(),
            ));
        }
        Ok(Self { rows, n_steps })
    }

    /// The published startup table at the given resolution.
    pub fn standard(n_steps: usize) -> Result<Self, TwinError> {
        Self::new(table_one_rows().to_vec(), n_steps)
    }

    pub fn rows(&self) -> &[ObservationVector] {
        &self.rows
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
}

/// One row of the interpolated dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolatedPoint {
    /// Index `i` of the anchor pair `(S_i, S_{i+1})`.
    pub segment: usize,
    /// Step `s` in `0..=n`.
    pub step: usize,
    /// Digital state label after RP adjustment.
    pub label: usize,
    pub obs: ObservationVector,
}

/// Linear interpolation `x_i + (s/n)(x_{i+1} - x_i)` over every adjacent
/// anchor pair, with `s` running over `0..=n` inclusive.
///
/// A row is labelled with the nearer anchor of its segment. Rows whose reactor
/// power has already risen above the segment's starting anchor are assigned to
/// the next stage.
pub fn interpolate(table: &PlantStateTable) -> Result<Vec<InterpolatedPoint>, TwinError> {
    let n = table.n_steps;
    if n == 0 {
        return Err(TwinError::InvalidResolution);
    }
    let rows = table.rows();
    let mut out = Vec::with_capacity((rows.len() - 1) * (n + 1));
    for (i, pair) in rows.windows(2).enumerate() {
        let (lo, hi) = (pair[0].to_array(), pair[1].to_array());
        for s in 0..=n {
            let frac = s as f64 / n as f64;
            let mut v = [0.0; NUM_PARAMS];
            for p in 0..NUM_PARAMS {
                v[p] = if s == n {
                    hi[p]
                } else {
                    lo[p] + frac * (hi[p] - lo[p])
                };
            }
            let obs = ObservationVector::from_array(v);
            let mut label = if 2 * s <= n { i } else { i + 1 };
            if obs.rp > pair[0].rp {
                label = i + 1;
            }
            out.push(InterpolatedPoint {
                segment: i,
                step: s,
                label,
                obs,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoronDirection {
    Increase,
    Decrease,
}

/// A discrete control configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlAction {
    pub id: usize,
    /// Rod banks A, B, C, D.
    pub rods: [bool; 4],
    pub boron: BoronDirection,
    pub feed_pumps: [bool; 3],
    pub condenser_pumps: [bool; 3],
}

impl ControlAction {
    fn row(id: usize, rods: [u8; 4], boron: BoronDirection, feed: [u8; 3], cond: [u8; 3]) -> Self {
        Self {
            id,
            rods: rods.map(|b| b == 1),
            boron,
            feed_pumps: feed.map(|b| b == 1),
            condenser_pumps: cond.map(|b| b == 1),
        }
    }
}

/// Control input mapping U0..U4, plus u5 which holds the U4 configuration
/// during power operation.
pub fn table_two_actions() -> Vec<ControlAction> {
    use BoronDirection::*;
    vec![
        ControlAction::row(0, [1, 1, 0, 0], Increase, [1, 0, 0], [1, 0, 0]),
        ControlAction::row(1, [1, 1, 0, 0], Increase, [1, 0, 0], [1, 0, 0]),
        ControlAction::row(2, [0, 1, 1, 0], Increase, [1, 0, 0], [1, 0, 0]),
        ControlAction::row(3, [0, 0, 1, 1], Increase, [1, 0, 0], [1, 0, 0]),
        ControlAction::row(4, [1, 1, 1, 1], Decrease, [1, 1, 1], [1, 1, 1]),
        ControlAction::row(5, [1, 1, 1, 1], Decrease, [1, 1, 1], [1, 1, 1]),
    ]
}
