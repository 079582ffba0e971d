#![allow(dead_code)]

use std::collections::HashSet;

use evflex::mdp::{Car, CostMode, MdpConfig};
use evflex::nn::QNetwork;
use evflex::sessions::{max_concurrency, sessions_for_day, DayArrivals, EvSession};
use rand::Rng;

pub fn session(
    arrival_slot: usize,
    duration_slots: usize,
    charge_slots: usize,
    station_id: usize,
) -> EvSession {
    EvSession {
        day: 1,
        arrival_slot,
        duration_slots,
        charge_slots,
        station_id,
    }
}

/// The two-car toy world: n_max = 2, s_max = 3, C1 = (3, 2), C2 = (2, 1).
pub fn toy() -> (MdpConfig, DayArrivals) {
    let cfg = MdpConfig::new(3, 2).unwrap();
    let day = sessions_for_day(&[session(1, 3, 2, 0), session(1, 2, 1, 1)], 1, 3);
    (cfg, day)
}

/// Counts distinct per-diagonal charge vectors reachable by charging any
/// subset of the cars; updated mode keeps only subsets charging every car
/// without slack.
pub fn subset_action_count(cars: &[Car], s_max: usize, mode: CostMode) -> usize {
    let mut seen = HashSet::new();
    'subsets: for mask in 0u32..1 << cars.len() {
        let mut counts = vec![0usize; s_max];
        for (k, c) in cars.iter().enumerate() {
            let on = mask >> k & 1 == 1;
            if mode == CostMode::Updated && c.depart == c.charge && !on {
                continue 'subsets;
            }
            if on {
                counts[c.depart - c.charge] += 1;
            }
        }
        seen.insert(counts);
    }
    seen.len()
}

/// Random connected cars for a `(s_max, n_max)` fleet.
pub fn random_cars<R: Rng>(rng: &mut R, s_max: usize, n_max: usize) -> Vec<Car> {
    let n = rng.gen_range(0..=n_max);
    (0..n)
        .map(|_| {
            let depart = rng.gen_range(1..=s_max);
            Car::new(depart, rng.gen_range(1..=depart))
        })
        .collect()
}

/// Exact minimum day cost by exhaustive search over which connected cars
/// charge in each slot. Old mode pays `penalty_weight` per undelivered slot;
/// updated mode must charge every car without slack.
pub fn dp_day_optimum(sessions: &[EvSession], mode: CostMode, cfg: &MdpConfig) -> f64 {
    fn go(
        t: usize,
        cars: Vec<(usize, usize)>,
        sessions: &[EvSession],
        mode: CostMode,
        cfg: &MdpConfig,
    ) -> f64 {
        if t > cfg.s_max {
            return 0.0;
        }
        let mut cars = cars;
        for s in sessions.iter().filter(|s| s.arrival_slot == t) {
            cars.push((s.duration_slots, s.charge_slots));
        }
        let mut best = f64::INFINITY;
        'subsets: for mask in 0u32..1 << cars.len() {
            let mut next = Vec::new();
            let mut charged = 0usize;
            let mut shortfall = 0usize;
            for (k, &(mut dep, mut ch)) in cars.iter().enumerate() {
                let on = mask >> k & 1 == 1;
                if mode == CostMode::Updated && dep == ch && !on {
                    continue 'subsets;
                }
                if on {
                    charged += 1;
                    ch -= 1;
                    if ch == 0 {
                        continue;
                    }
                }
                dep -= 1;
                if ch > dep {
                    shortfall += ch - dep;
                    ch = dep;
                }
                if dep > 0 {
                    next.push((dep, ch));
                }
            }
            let x = charged as f64 / cfg.n_max as f64;
            let mut cost = x * x;
            if mode == CostMode::Old {
                cost += cfg.penalty_weight * shortfall as f64;
            }
            best = best.min(cost + go(t + 1, next, sessions, mode, cfg));
        }
        best
    }
    go(1, Vec::new(), sessions, mode, cfg)
}

/// Largest relative deviation, `|a - n| / max(|a| + |n|, tiny)` over the
/// whole parameter vector, between analytic and central-difference
/// gradients of the squared error at `(x, y)`.
pub fn gradient_check(net: &QNetwork<f64>, x: &[f64], y: f64, h: f64) -> f64 {
    let (_, grads) = net.loss_gradient(x, y).unwrap();
    let analytic = grads.flatten();
    let params = net.params();
    let mut probe = net.clone();
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + h;
        probe.set_params(&p).unwrap();
        let plus = (probe.predict(x).unwrap() - y).powi(2);
        p[i] = params[i] - h;
        probe.set_params(&p).unwrap();
        let minus = (probe.predict(x).unwrap() - y).powi(2);
        numeric.push((plus - minus) / (2.0 * h));
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
        + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

/// Day 1 built from `sessions`, skipping any that would push concurrency
/// past `n_max`; station ids are reassigned in order.
pub fn valid_day(sessions: Vec<EvSession>, cfg: &MdpConfig) -> DayArrivals {
    let mut kept: Vec<EvSession> = Vec::new();
    for s in sessions {
        kept.push(s);
        if max_concurrency(&kept, cfg.s_max) > cfg.n_max {
            kept.pop();
        }
    }
    for (k, s) in kept.iter_mut().enumerate() {
        s.station_id = k;
    }
    sessions_for_day(&kept, 1, cfg.s_max)
}
