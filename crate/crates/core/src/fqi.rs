//! Fitted Q-iteration over a fixed experience set, and the greedy policy
//! extracted from the learned Q-function.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experience::{ExperienceSet, ExperienceTuple};
use crate::mdp::{
    candidate_actions, diagonal_totals, enumerate_actions, Action, CostMode, DiagonalTotals,
    MdpConfig, StateMatrix,
};
use crate::nn::{Dataset, NetSpec, QNetwork};
use crate::policy::Policy;
use crate::scalar::Scalar;

/// Seed of the subsample used for states whose action set exceeds the cap.
/// Shared by training and evaluation so both minimize over the same actions.
pub const SUBSAMPLE_SEED: u64 = 0x5EED;

/// Feature layout of a state-action pair:
/// the lower-left triangle of bins (`depart >= charge`) row by row, then a
/// one-hot timeslot, then the charge fraction of every diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    s_max: usize,
}

impl Encoder {
    pub fn new(cfg: &MdpConfig) -> Self {
        Encoder { s_max: cfg.s_max }
    }

    fn bins_len(&self) -> usize {
        self.s_max * (self.s_max + 1) / 2
    }

    pub fn dim(&self) -> usize {
        self.bins_len() + 2 * self.s_max
    }

    fn bin_index(depart: usize, charge: usize) -> usize {
        depart * (depart - 1) / 2 + (charge - 1)
    }

    fn action_offset(&self) -> usize {
        self.bins_len() + self.s_max
    }

    /// Writes the state part (bins and timeslot) and zeroes the action part.
    pub fn encode_state<T: Scalar>(&self, s: &StateMatrix, out: &mut [T]) {
        out.fill(T::zero());
        let n = T::of_usize(s.n_max());
        for (car, k) in s.bins() {
            out[Self::bin_index(car.depart, car.charge)] = T::of_usize(k) / n;
        }
        if !s.is_terminal() {
            out[self.bins_len() + s.t() - 1] = T::one();
        }
    }

    /// Nonzero action features as `(index, fraction)`.
    pub fn action_entries<T: Scalar>(
        &self,
        u: &Action,
        totals: &DiagonalTotals,
    ) -> Vec<(usize, T)> {
        u.fractions::<T>(totals)
            .into_iter()
            .enumerate()
            .filter(|(_, f)| *f != T::zero())
            .map(|(d, f)| (self.action_offset() + d, f))
            .collect()
    }

    fn encode_into<T: Scalar>(
        &self,
        s: &StateMatrix,
        u: &Action,
        totals: &DiagonalTotals,
        out: &mut [T],
    ) {
        self.encode_state(s, out);
        for (i, f) in self.action_entries(u, totals) {
            out[i] = f;
        }
    }
}

/// Feature vector of `(s, u)`.
pub fn encode<T: Scalar>(s: &StateMatrix, u: &Action, cfg: &MdpConfig) -> Result<Vec<T>> {
    let totals = diagonal_totals(s);
    u.check_feasible(&totals)?;
    let enc = Encoder::new(cfg);
    let mut out = vec![T::zero(); enc.dim()];
    enc.encode_into(s, u, &totals, &mut out);
    Ok(out)
}

fn argmin_over<T: Scalar>(
    q: &QNetwork<T>,
    enc: &Encoder,
    s: &StateMatrix,
    actions: &[Action],
) -> Result<(usize, T)> {
    let totals = diagonal_totals(s);
    let mut shared = vec![T::zero(); enc.dim()];
    enc.encode_state(s, &mut shared);
    let entries: Vec<Vec<(usize, T)>> = actions
        .iter()
        .map(|u| enc.action_entries(u, &totals))
        .collect();
    let mut values = Vec::with_capacity(actions.len());
    q.predict_variants(&shared, entries.iter().map(Vec::as_slice), &mut values)?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        // Strict comparison keeps the lexicographically first minimizer.
        if *v < values[best] {
            best = k;
        }
    }
    Ok((best, values[best]))
}

/// Action minimizing `q` over the full action set of `s`; ties go to the
/// lexicographically smallest action. Fails when the set exceeds the cap.
pub fn greedy_action<T: Scalar>(
    q: &QNetwork<T>,
    s: &StateMatrix,
    mode: CostMode,
    cfg: &MdpConfig,
) -> Result<Action> {
    let mut actions = enumerate_actions(&diagonal_totals(s), mode, cfg.action_cap)?;
    let (k, _) = argmin_over(q, &Encoder::new(cfg), s, &actions)?;
    Ok(actions.swap_remove(k))
}

/// Like [`greedy_action`], but over-cap states minimize over the same seeded
/// subsample that training used.
pub fn greedy_action_sampled<T: Scalar>(
    q: &QNetwork<T>,
    s: &StateMatrix,
    mode: CostMode,
    cfg: &MdpConfig,
) -> Result<Action> {
    let mut actions = candidate_actions(&diagonal_totals(s), mode, cfg.action_cap, SUBSAMPLE_SEED);
    let (k, _) = argmin_over(q, &Encoder::new(cfg), s, &actions)?;
    Ok(actions.swap_remove(k))
}

/// Greedy policy of a trained Q-network.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<T> {
    pub q: QNetwork<T>,
    pub mode: CostMode,
    pub cfg: MdpConfig,
}

impl<T: Scalar> Policy for GreedyPolicy<T> {
    fn act(&self, state: &StateMatrix) -> Result<Action> {
        greedy_action_sampled(&self.q, state, self.mode, &self.cfg)
    }
}

struct Targets<'a, T> {
    tuples: &'a [ExperienceTuple],
    targets: Vec<T>,
    enc: Encoder,
}

impl<T: Scalar> Dataset<T> for Targets<'_, T> {
    fn len(&self) -> usize {
        self.tuples.len()
    }

    fn dim(&self) -> usize {
        self.enc.dim()
    }

    fn features(&self, i: usize, out: &mut [T]) {
        let x = &self.tuples[i];
        self.enc
            .encode_into(&x.s, &x.u, &diagonal_totals(&x.s), out);
    }

    fn target(&self, i: usize) -> T {
        self.targets[i]
    }
}

/// Timing and fit quality of one FQI iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub target_secs: f64,
    pub fit_secs: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct FqiOutcome<T> {
    pub network: QNetwork<T>,
    pub iterations: Vec<IterationStats>,
}

/// Bellman targets `cost + min_u' Q(s', u')`, or `cost` alone when `s'` is
/// terminal or no previous Q exists.
fn build_targets<T: Scalar>(
    set: &ExperienceSet,
    q: Option<&QNetwork<T>>,
    enc: &Encoder,
    cfg: &MdpConfig,
) -> Result<Vec<T>> {
    let target = |x: &ExperienceTuple| -> Result<T> {
        let cost = T::of(x.cost);
        match q {
            Some(q) if !x.terminal => {
                let actions = candidate_actions(
                    &diagonal_totals(&x.s_next),
                    set.mode,
                    cfg.action_cap,
                    SUBSAMPLE_SEED,
                );
                Ok(cost + argmin_over(q, enc, &x.s_next, &actions)?.1)
            }
            _ => Ok(cost),
        }
    };
    set.tuples.par_iter().map(target).collect()
}

/// Runs `s_max` iterations of fitted Q-iteration on `set`.
///
/// Iteration 1 regresses on immediate costs (`Q_0 = 0`); each later
/// iteration regresses on one-step Bellman targets of the previous network.
/// The regressor is warm-started from the previous iteration's weights.
pub fn fit_fqi<T: Scalar>(
    set: &ExperienceSet,
    cfg: &MdpConfig,
    spec: &NetSpec,
) -> Result<FqiOutcome<T>> {
    if set.is_empty() {
        return Err(Error::Empty("experience set"));
    }
    if set.s_max != cfg.s_max || set.n_max != cfg.n_max {
        return Err(Error::config(
            "mdp",
            format!(
                "experience set was built for s_max={}, n_max={}",
                set.s_max, set.n_max
            ),
        ));
    }
    let enc = Encoder::new(cfg);
    let mut net = QNetwork::<T>::new(enc.dim(), spec)?;
    let mut iterations = Vec::with_capacity(cfg.s_max);
    for k in 1..=cfg.s_max {
        let start = Instant::now();
        let targets = build_targets(set, (k > 1).then_some(&net), &enc, cfg)?;
        let target_secs = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let data = Targets {
            tuples: &set.tuples,
            targets,
            enc,
        };
        let stats = net.fit(&data, k as u64)?;
        iterations.push(IterationStats {
            iteration: k,
            target_secs,
            fit_secs: start.elapsed().as_secs_f64(),
            loss: stats.final_loss,
        });
    }
    Ok(FqiOutcome {
        network: net,
        iterations,
    })
}
