use crate::error::{Error, Result};

use super::action::Action;
use super::state::{diagonal_totals, Car, StateMatrix};
use super::MdpConfig;

/// A car carrying the identity of the session it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrackedCar {
    pub id: usize,
    pub car: Car,
}

/// What happened to individual cars during one slot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepReport {
    /// Ids charged during the slot.
    pub charged: Vec<usize>,
    /// Ids whose demand was met and left the state.
    pub completed: Vec<usize>,
    /// Ids that reached their departure slot with demand left (after clamping).
    pub departed: Vec<usize>,
    /// `(id, slots)` for every car whose remaining charge was clamped.
    pub stranded: Vec<(usize, usize)>,
    pub shortfall_slots: usize,
}

impl StepReport {
    pub fn outcome(&self, next_state: StateMatrix) -> TransitionOutcome {
        TransitionOutcome {
            next_state,
            shortfall_slots: self.shortfall_slots,
            charged_count: self.charged.len(),
            departed: self.departed.len(),
            completed: self.completed.len(),
        }
    }
}

/// Car-level simulator behind [`transition`]. Keeps session identities so
/// schedules can be traced back to individual sessions.
#[derive(Debug, Clone)]
pub struct Fleet {
    t: usize,
    cfg: MdpConfig,
    cars: Vec<TrackedCar>,
}

impl Fleet {
    pub fn new(t: usize, cfg: &MdpConfig) -> Self {
        Fleet {
            t,
            cfg: *cfg,
            cars: Vec::new(),
        }
    }

    fn from_state(state: &StateMatrix, cfg: &MdpConfig) -> Self {
        let cars = state
            .cars()
            .into_iter()
            .enumerate()
            .map(|(id, car)| TrackedCar { id, car })
            .collect();
        Fleet {
            t: state.t(),
            cfg: *cfg,
            cars,
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn cars(&self) -> &[TrackedCar] {
        &self.cars
    }

    pub fn state(&self) -> StateMatrix {
        StateMatrix::from_cars_unchecked(
            self.t,
            self.cfg.s_max,
            self.cfg.n_max,
            self.cars.iter().map(|c| c.car),
        )
    }

    /// Connects cars at the current slot.
    pub fn admit(&mut self, arrivals: &[TrackedCar]) -> Result<()> {
        for a in arrivals {
            a.car.check(&self.cfg)?;
        }
        let count = self.cars.len() + arrivals.len();
        if count > self.cfg.n_max {
            return Err(Error::Concurrency {
                count,
                n_max: self.cfg.n_max,
            });
        }
        self.cars.extend_from_slice(arrivals);
        Ok(())
    }

    /// Applies `action` for the current slot, advances to the next slot and
    /// connects `arrivals` there.
    ///
    /// On each diagonal the cars charged are the ones departing soonest, ties
    /// by least remaining charge, then by id. Cars left with more charge than
    /// time are clamped onto the main diagonal and the clamped slots counted
    /// as shortfall.
    pub fn step(&mut self, action: &Action, arrivals: &[TrackedCar]) -> Result<StepReport> {
        if self.t > self.cfg.s_max {
            return Err(Error::TerminalState(self.t));
        }
        let totals = diagonal_totals(&self.state());
        action.check_feasible(&totals)?;

        let mut report = StepReport::default();
        let mut order: Vec<usize> = (0..self.cars.len()).collect();
        order.sort_by_key(|&k| {
            let c = &self.cars[k];
            (c.car.flex(), c.car.depart, c.car.charge, c.id)
        });
        let mut taken = vec![0usize; totals.len()];
        let mut charge_now = vec![false; self.cars.len()];
        for k in order {
            let d = self.cars[k].car.flex();
            if taken[d] < action.counts()[d] {
                taken[d] += 1;
                charge_now[k] = true;
            }
        }

        let mut next = Vec::with_capacity(self.cars.len() + arrivals.len());
        for (k, mut tc) in self.cars.drain(..).enumerate() {
            if charge_now[k] {
                tc.car.charge -= 1;
                report.charged.push(tc.id);
                if tc.car.charge == 0 {
                    report.completed.push(tc.id);
                    continue;
                }
            }
            tc.car.depart -= 1;
            if tc.car.charge > tc.car.depart {
                let lost = tc.car.charge - tc.car.depart;
                report.shortfall_slots += lost;
                report.stranded.push((tc.id, lost));
                tc.car.charge = tc.car.depart;
            }
            if tc.car.depart == 0 {
                report.departed.push(tc.id);
                continue;
            }
            next.push(tc);
        }
        self.cars = next;
        self.t += 1;
        if !arrivals.is_empty() && self.t > self.cfg.s_max {
            return Err(Error::MalformedSession(format!(
                "arrival after the last slot {}",
                self.cfg.s_max
            )));
        }
        self.admit(arrivals)?;
        Ok(report)
    }
}

/// Result of one aggregated transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOutcome {
    pub next_state: StateMatrix,
    pub shortfall_slots: usize,
    pub charged_count: usize,
    /// Cars that left at their departure slot.
    pub departed: usize,
    /// Cars dropped because their demand was met.
    pub completed: usize,
}

/// Advances `state` by one slot under `action`, then adds `arrivals`.
pub fn transition(
    state: &StateMatrix,
    action: &Action,
    arrivals: &[Car],
    cfg: &MdpConfig,
) -> Result<TransitionOutcome> {
    let mut fleet = Fleet::from_state(state, cfg);
    let base = fleet.cars.len();
    let tracked: Vec<_> = arrivals
        .iter()
        .enumerate()
        .map(|(k, &car)| TrackedCar { id: base + k, car })
        .collect();
    let report = fleet.step(action, &tracked)?;
    Ok(report.outcome(fleet.state()))
}
