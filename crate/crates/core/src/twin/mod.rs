//! Probabilistic graphical model of the PWR startup asset-twin.
//!
//! The twin tracks a discrete belief over digital states D0..D_last. Anchor
//! states D0..D4 mirror the startup stages; D5 onward are power-operation
//! states. Each time step composes an action-conditioned dynamics factor with
//! a Gaussian assimilation factor:
//!
//!   b_t(d) ∝ P(o_t | d) · Σ_{d'} P(d | d', u_{t-1}) · b_{t-1}(d')

mod constraints;
mod filter;
mod model;
mod plant;
mod planner;
mod predict;
mod reward;
mod runner;

pub use constraints::{check_operational_constraints, discrepancy, select_min_discrepancy, Envelope};
pub use filter::{
    assimilate, assimilate_log, entropy, propagate, step_update, StateBelief,
};
pub use model::{
    state_pair, KappaEntry, ObservationModel, StatePair, TransitionModel, TwinConfig, TwinModel,
};
pub use plant::{
    interpolate, table_one_rows, table_two_actions, BoronDirection, ControlAction,
    InterpolatedPoint, ObservationVector, PlantStateTable, NUM_ANCHORS, NUM_PARAMS, PARAM_NAMES,
};
pub use planner::{value_iteration, Mdp, PlanResult, Policy};
pub use predict::{predict_forward, Dynamics, predict_with_observations, PredictionStep};
pub use reward::{reward_control, reward_obs, reward_state, RewardBreakdown};
pub use runner::{run_twin, Phase, TwinRunConfig, TwinStepRecord, TwinTrajectory};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwinError {
    #[error("interpolation resolution must be at least 1")]
    InvalidResolution,
    #[error("invalid plant table: {0}")]
    InvalidTable(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("state index {index} out of range (have {len} states)")]
    StateOutOfRange { index: usize, len: usize },
    #[error("action index {index} out of range (have {len} actions)")]
    ActionOutOfRange { index: usize, len: usize },
    #[error("belief invalid: {0}")]
    InvalidBelief(String),
    #[error("all posterior weights vanished")]
    DegenerateEvidence,
    #[error("reward needs at least one configuration")]
    EmptyConfiguration,
    #[error("discount factor {0} outside [0, 1)")]
    InvalidDiscount(f64),
    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("invalid twin configuration: {0}")]
    InvalidConfig(String),
}
