use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::MdpConfig;

/// Remaining (slots until departure, slots of charge) of one connected car.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Car {
    pub depart: usize,
    pub charge: usize,
}

impl Car {
    pub fn new(depart: usize, charge: usize) -> Self {
        Car { depart, charge }
    }

    /// Slack: how many slots of charging can still be postponed.
    pub fn flex(&self) -> usize {
        self.depart - self.charge
    }

    pub(crate) fn check(&self, cfg: &MdpConfig) -> Result<()> {
        if self.charge == 0 || self.charge > self.depart || self.depart > cfg.s_max {
            return Err(Error::MalformedSession(format!(
                "car needs 1 <= charge <= depart <= {}, got depart={} charge={}",
                cfg.s_max, self.depart, self.charge
            )));
        }
        Ok(())
    }
}

/// MDP state: timeslot `t` (1-based, `s_max + 1` is terminal) and per-bin car
/// counts. Bin `(i, j)` holds cars with `i` slots until departure and `j`
/// slots of charge left; the matrix entry is the count divided by `n_max`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct StateMatrix {
    t: usize,
    s_max: usize,
    n_max: usize,
    counts: Vec<u8>,
}

impl StateMatrix {
    pub fn empty(t: usize, cfg: &MdpConfig) -> Self {
        StateMatrix {
            t,
            s_max: cfg.s_max,
            n_max: cfg.n_max,
            counts: vec![0; cfg.s_max * cfg.s_max],
        }
    }

    /// Builds a state from car counts per bin, checking every invariant.
    pub fn from_counts(t: usize, cfg: &MdpConfig, counts: Vec<u8>) -> Result<Self> {
        if counts.len() != cfg.s_max * cfg.s_max {
            return Err(Error::MalformedSession(format!(
                "state needs {} bins, got {}",
                cfg.s_max * cfg.s_max,
                counts.len()
            )));
        }
        let s = StateMatrix {
            t,
            s_max: cfg.s_max,
            n_max: cfg.n_max,
            counts,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.t == 0 || self.t > self.s_max + 1 {
            return Err(Error::MalformedSession(format!(
                "timeslot {} outside 1..={}",
                self.t,
                self.s_max + 1
            )));
        }
        for i in 1..=self.s_max {
            for j in (i + 1)..=self.s_max {
                if self.count(i, j) != 0 {
                    return Err(Error::MalformedSession(format!(
                        "bin ({i},{j}) needs more charge than time left"
                    )));
                }
            }
        }
        let n = self.cars_in();
        if n > self.n_max {
            return Err(Error::Concurrency {
                count: n,
                n_max: self.n_max,
            });
        }
        Ok(())
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn s_max(&self) -> usize {
        self.s_max
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn is_terminal(&self) -> bool {
        self.t > self.s_max
    }

    fn index(&self, depart: usize, charge: usize) -> usize {
        debug_assert!((1..=self.s_max).contains(&depart) && (1..=self.s_max).contains(&charge));
        (depart - 1) * self.s_max + (charge - 1)
    }

    /// Number of cars in bin `(depart, charge)`, both 1-based.
    pub fn count(&self, depart: usize, charge: usize) -> usize {
        self.counts[self.index(depart, charge)] as usize
    }

    /// Matrix entry: fraction of stations holding a car in the bin.
    pub fn fraction<T: Scalar>(&self, depart: usize, charge: usize) -> T {
        T::of_usize(self.count(depart, charge)) / T::of_usize(self.n_max)
    }

    pub fn counts(&self) -> &[u8] {
        &self.counts
    }

    pub fn cars_in(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    /// Occupied bins as `(car, multiplicity)` in ascending (depart, charge) order.
    pub fn bins(&self) -> impl Iterator<Item = (Car, usize)> + '_ {
        (1..=self.s_max).flat_map(move |i| {
            (1..=i).filter_map(move |j| {
                let n = self.count(i, j);
                (n > 0).then_some((Car::new(i, j), n))
            })
        })
    }

    /// One entry per car, ascending (depart, charge).
    pub fn cars(&self) -> Vec<Car> {
        self.bins()
            .flat_map(|(car, n)| std::iter::repeat_n(car, n))
            .collect()
    }

    pub(crate) fn from_cars_unchecked(
        t: usize,
        s_max: usize,
        n_max: usize,
        cars: impl IntoIterator<Item = Car>,
    ) -> Self {
        let mut s = StateMatrix {
            t,
            s_max,
            n_max,
            counts: vec![0; s_max * s_max],
        };
        for car in cars {
            let k = s.index(car.depart, car.charge);
            s.counts[k] += 1;
        }
        s
    }
}

impl fmt::Debug for StateMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bins: Vec<_> = self
            .bins()
            .map(|(c, n)| format!("({},{})x{}", c.depart, c.charge, n))
            .collect();
        write!(f, "State(t={}, [{}])", self.t, bins.join(" "))
    }
}

/// Builds the state seen at slot `t` from the remaining requirements of every
/// connected car.
pub fn state_from_sessions(cars: &[Car], t: usize, cfg: &MdpConfig) -> Result<StateMatrix> {
    for car in cars {
        car.check(cfg)?;
    }
    if cars.len() > cfg.n_max {
        return Err(Error::Concurrency {
            count: cars.len(),
            n_max: cfg.n_max,
        });
    }
    if t == 0 || t > cfg.s_max + 1 {
        return Err(Error::MalformedSession(format!(
            "timeslot {t} outside 1..={}",
            cfg.s_max + 1
        )));
    }
    Ok(StateMatrix::from_cars_unchecked(
        t,
        cfg.s_max,
        cfg.n_max,
        cars.iter().copied(),
    ))
}

/// Car counts per diagonal; index `d` counts cars with slack `d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiagonalTotals(Vec<usize>);

impl DiagonalTotals {
    pub fn new(totals: Vec<usize>) -> Self {
        DiagonalTotals(totals)
    }

    pub fn get(&self, d: usize) -> usize {
        self.0[d]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

pub fn diagonal_totals(state: &StateMatrix) -> DiagonalTotals {
    let mut totals = vec![0; state.s_max()];
    for (car, n) in state.bins() {
        totals[car.flex()] += n;
    }
    DiagonalTotals(totals)
}
