//! Operational and safety envelopes, and belief discrepancy.

use serde::{Deserialize, Serialize};

use super::filter::{propagate, StateBelief};
use super::model::TwinModel;
use super::plant::{ObservationVector, NUM_PARAMS};
use super::TwinError;

/// Per-parameter `[min, max]` bounds in PL, RCT, RCP, SGP, SGL, RP order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub operational: [[f64; 2]; NUM_PARAMS],
    pub safety: [[f64; 2]; NUM_PARAMS],
}

impl Envelope {
    /// Operational hull of the given rows with default safety limits.
    pub fn from_rows(rows: &[ObservationVector]) -> Self {
        let mut operational = [[f64::INFINITY, f64::NEG_INFINITY]; NUM_PARAMS];
        for r in rows {
            for (b, x) in operational.iter_mut().zip(r.to_array()) {
                b[0] = b[0].min(x);
                b[1] = b[1].max(x);
            }
        }
        Self {
            operational,
            safety: [
                [0.0, 100.0],
                [0.0, 350.0],
                [0.0, 172.0],
                [0.0, 85.0],
                [0.0, 100.0],
                [0.0, 100.0],
            ],
        }
    }
}

/// True iff every parameter lies inside both envelopes.
pub fn check_operational_constraints(o: &ObservationVector, env: &Envelope) -> bool {
    o.to_array().iter().enumerate().all(|(i, &x)| {
        let [olo, ohi] = env.operational[i];
        let [slo, shi] = env.safety[i];
        x.is_finite() && x >= olo && x <= ohi && x >= slo && x <= shi
    })
}

/// Total-variation distance.
pub fn discrepancy(a: &StateBelief, b: &StateBelief) -> Result<f64, TwinError> {
    if a.len() != b.len() {
        return Err(TwinError::InvalidBelief("belief length mismatch".into()));
    }
    Ok(0.5
        * a.probs()
            .iter()
            .zip(b.probs())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>())
}

/// Action whose predicted belief is closest to `target`, among actions whose
/// expected observation satisfies the envelope. Lowest id wins ties; `None`
/// if no action is admissible.
pub fn select_min_discrepancy(
    model: &TwinModel,
    belief: &StateBelief,
    target: &StateBelief,
    env: &Envelope,
) -> Result<Option<(usize, f64)>, TwinError> {
    let mut best: Option<(usize, f64)> = None;
    for u in 0..model.n_actions() {
        let pred = propagate(belief, model.kernel(u))?;
        let mut expected = [0.0; NUM_PARAMS];
        for (d, p) in pred.probs().iter().enumerate() {
            for (e, m) in expected.iter_mut().zip(model.observation.mean(d).to_array()) {
                *e += p * m;
            }
        }
        if !check_operational_constraints(&ObservationVector::from_array(expected), env) {
            continue;
        }
        let dist = discrepancy(&pred, target)?;
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((u, dist));
        }
    }
    Ok(best)
}
