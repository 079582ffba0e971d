//! Aggregated MDP for a group of charging stations.
//!
//! A state is the timeslot plus an `s_max x s_max` matrix binning connected
//! cars by (slots until departure, slots of charge still needed). Cars with
//! equal slack sit on one diagonal and an action picks how many cars of each
//! diagonal charge during the slot.

mod action;
mod cost;
mod dynamics;
mod state;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use action::{
    action_space_size, action_space_size_printed, candidate_actions, enumerate_actions,
    sample_action, Action,
};
pub use cost::{cost_demand, cost_penalty, transition_cost};
pub use dynamics::{transition, Fleet, StepReport, TrackedCar, TransitionOutcome};
pub use state::{diagonal_totals, state_from_sessions, Car, DiagonalTotals, StateMatrix};

/// Default number of actions a single state may enumerate before callers
/// have to fall back to subsampling.
pub const DEFAULT_ACTION_CAP: usize = 200_000;

/// Which cost function and action tree the MDP uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// Demand cost plus a penalty for unfinished charging; every diagonal,
    /// the main one included, is a free choice.
    Old,
    /// Demand cost only; cars without slack are always charged.
    Updated,
}

impl CostMode {
    pub const ALL: [CostMode; 2] = [CostMode::Old, CostMode::Updated];

    pub fn as_str(self) -> &'static str {
        match self {
            CostMode::Old => "old",
            CostMode::Updated => "updated",
        }
    }
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "old" => Ok(CostMode::Old),
            "updated" => Ok(CostMode::Updated),
            other => Err(Error::config(
                "mode",
                format!("expected old|updated, got {other:?}"),
            )),
        }
    }
}

/// Horizon, fleet size and penalty of the MDP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdpConfig", into = "RawMdpConfig")]
pub struct MdpConfig {
    pub s_max: usize,
    pub n_max: usize,
    pub slot_hours: f64,
    pub penalty_weight: f64,
    pub action_cap: usize,
}

impl MdpConfig {
    /// Config with the default penalty `s_max + 1` and default action cap.
    pub fn new(s_max: usize, n_max: usize) -> Result<Self> {
        let cfg = MdpConfig {
            s_max,
            n_max,
            slot_hours: 2.0,
            penalty_weight: s_max as f64 + 1.0,
            action_cap: DEFAULT_ACTION_CAP,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 12 two-hour slots, 10 stations.
    pub fn reference() -> Self {
        MdpConfig::new(12, 10).expect("reference config is valid")
    }

    pub fn with_penalty(mut self, penalty_weight: f64) -> Result<Self> {
        self.penalty_weight = penalty_weight;
        self.validate()?;
        Ok(self)
    }

    pub fn with_action_cap(mut self, action_cap: usize) -> Result<Self> {
        self.action_cap = action_cap;
        self.validate()?;
        Ok(self)
    }

    pub fn horizon_hours(&self) -> f64 {
        self.s_max as f64 * self.slot_hours
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_max == 0 {
            return Err(Error::config("mdp.s_max", "must be at least 1"));
        }
        if self.s_max > u8::MAX as usize {
            return Err(Error::config("mdp.s_max", "must be at most 255"));
        }
        if self.n_max == 0 {
            return Err(Error::config("mdp.n_max", "must be at least 1"));
        }
        if self.n_max > u8::MAX as usize {
            return Err(Error::config("mdp.n_max", "must be at most 255"));
        }
        if !(self.slot_hours.is_finite() && self.slot_hours > 0.0) {
            return Err(Error::config("mdp.slot_hours", "must be positive"));
        }
        // The worst demand cost over a full horizon is s_max (every slot at full load).
        if !(self.penalty_weight.is_finite() && self.penalty_weight > self.s_max as f64) {
            return Err(Error::config(
                "mdp.penalty_weight",
                format!("must exceed s_max = {}", self.s_max),
            ));
        }
        if self.action_cap == 0 {
            return Err(Error::config("mdp.action_cap", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMdpConfig {
    s_max: usize,
    n_max: usize,
    #[serde(default = "default_slot_hours")]
    slot_hours: f64,
    #[serde(default)]
    penalty_weight: Option<f64>,
    #[serde(default = "default_action_cap")]
    action_cap: usize,
}

fn default_slot_hours() -> f64 {
    2.0
}

fn default_action_cap() -> usize {
    DEFAULT_ACTION_CAP
}

impl TryFrom<RawMdpConfig> for MdpConfig {
    type Error = Error;

    fn try_from(raw: RawMdpConfig) -> Result<Self> {
        let cfg = MdpConfig {
            s_max: raw.s_max,
            n_max: raw.n_max,
            slot_hours: raw.slot_hours,
            penalty_weight: raw.penalty_weight.unwrap_or(raw.s_max as f64 + 1.0),
            action_cap: raw.action_cap,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<MdpConfig> for RawMdpConfig {
    fn from(cfg: MdpConfig) -> Self {
        RawMdpConfig {
            s_max: cfg.s_max,
            n_max: cfg.n_max,
            slot_hours: cfg.slot_hours,
            penalty_weight: Some(cfg.penalty_weight),
            action_cap: cfg.action_cap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_is_two_hour_slots_over_a_day() {
        let cfg = MdpConfig::reference();
        assert_eq!((cfg.s_max, cfg.n_max), (12, 10));
        assert_eq!(cfg.horizon_hours(), 24.0);
        assert_eq!(cfg.penalty_weight, 13.0);
    }

    #[test]
    fn penalty_must_exceed_horizon_demand() {
        assert!(MdpConfig::reference().with_penalty(12.0).is_err());
        assert!(MdpConfig::reference().with_penalty(12.5).is_ok());
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(MdpConfig::new(0, 10).is_err());
        assert!(MdpConfig::new(12, 0).is_err());
    }

    #[test]
    fn toml_defaults_fill_penalty() {
        let cfg: MdpConfig = toml::from_str("s_max = 3\nn_max = 2").unwrap();
        assert_eq!(cfg.penalty_weight, 4.0);
        assert_eq!(cfg.action_cap, DEFAULT_ACTION_CAP);
        let bad: std::result::Result<MdpConfig, _> =
            toml::from_str("s_max = 3\nn_max = 2\npenalty_weight = 1.0");
        assert!(bad.is_err());
    }

    #[test]
    fn mode_parses() {
        assert_eq!("old".parse::<CostMode>().unwrap(), CostMode::Old);
        assert_eq!("updated".parse::<CostMode>().unwrap(), CostMode::Updated);
        assert!("new".parse::<CostMode>().is_err());
    }
}
