//! Closed-loop simulation of a day under a state-feedback policy.

use crate::error::Result;
use crate::mdp::{Action, Fleet, MdpConfig, StateMatrix};
use crate::sessions::DayArrivals;

/// Maps an MDP state to the action taken in it.
pub trait Policy {
    fn act(&self, state: &StateMatrix) -> Result<Action>;
}

impl<F> Policy for F
where
    F: Fn(&StateMatrix) -> Result<Action>,
{
    fn act(&self, state: &StateMatrix) -> Result<Action> {
        self(state)
    }
}

/// Realized outcome of one simulated day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rollout {
    /// Cars charging in each slot.
    pub loads: Vec<usize>,
    /// Absolute slots (1-based) in which each session charged, indexed like
    /// [`DayArrivals::sessions`].
    pub charged_slots: Vec<Vec<usize>>,
    /// Charge slots that could not be delivered before departure.
    pub shortfall_slots: usize,
    pub actions: Vec<Action>,
}

impl Rollout {
    /// Sessions that left with unmet demand.
    pub fn unfinished(&self, day: &DayArrivals) -> Vec<usize> {
        day.sessions()
            .zip(&self.charged_slots)
            .enumerate()
            .filter(|(_, (s, c))| c.len() < s.charge_slots)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Runs `policy` through the day, revealing each slot's arrivals only when
/// that slot starts.
pub fn simulate_day<P: Policy + ?Sized>(
    policy: &P,
    day: &DayArrivals,
    cfg: &MdpConfig,
) -> Result<Rollout> {
    let n_sessions = day.sessions().count();
    let mut fleet = Fleet::new(1, cfg);
    fleet.admit(&day.tracked_at(1))?;
    let mut out = Rollout {
        loads: Vec::with_capacity(cfg.s_max),
        charged_slots: vec![Vec::new(); n_sessions],
        shortfall_slots: 0,
        actions: Vec::with_capacity(cfg.s_max),
    };
    for t in 1..=cfg.s_max {
        let u = policy.act(&fleet.state())?;
        let report = fleet.step(&u, &day.tracked_at(t + 1))?;
        out.loads.push(report.charged.len());
        for id in report.charged {
            out.charged_slots[id].push(t);
        }
        out.shortfall_slots += report.shortfall_slots;
        out.actions.push(u);
    }
    Ok(out)
}
