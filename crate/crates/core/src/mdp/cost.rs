use crate::scalar::Scalar;

use super::action::Action;
use super::dynamics::TransitionOutcome;
use super::{CostMode, MdpConfig};

/// Quadratic demand cost of one slot: `(charged / n_max)^2`.
pub fn cost_demand<T: Scalar>(action: &Action, cfg: &MdpConfig) -> T {
    let load = T::of_usize(action.charged_count()) / T::of_usize(cfg.n_max);
    load * load
}

/// `penalty_weight` per slot of charge that could no longer be delivered.
pub fn cost_penalty<T: Scalar>(outcome: &TransitionOutcome, cfg: &MdpConfig) -> T {
    T::of(cfg.penalty_weight) * T::of_usize(outcome.shortfall_slots)
}

pub fn transition_cost<T: Scalar>(
    action: &Action,
    outcome: &TransitionOutcome,
    mode: CostMode,
    cfg: &MdpConfig,
) -> T {
    let demand = cost_demand(action, cfg);
    match mode {
        CostMode::Old => demand + cost_penalty(outcome, cfg),
        CostMode::Updated => demand,
    }
}
