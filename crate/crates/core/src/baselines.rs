//! Reference schedules: charge-on-arrival, the uniform-spreading heuristic,
//! the perfect-knowledge optimum and an exhaustive oracle for the optimum.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::mdp::MdpConfig;
use crate::policy::Rollout;
use crate::sessions::{DayArrivals, EvSession};

/// Per-slot loads and the absolute slots each session charges in, indexed
/// like [`DayArrivals::sessions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaySchedule {
    pub loads: Vec<usize>,
    pub patterns: Vec<Vec<usize>>,
}

impl DaySchedule {
    fn from_patterns(patterns: Vec<Vec<usize>>, s_max: usize) -> Self {
        let mut loads = vec![0; s_max];
        for p in &patterns {
            for &t in p {
                loads[t - 1] += 1;
            }
        }
        DaySchedule { loads, patterns }
    }

    /// Realized schedule of a simulated policy.
    pub fn from_rollout(rollout: &Rollout) -> Self {
        DaySchedule {
            loads: rollout.loads.clone(),
            patterns: rollout.charged_slots.clone(),
        }
    }

    /// Sum of squared loads, in car-count units.
    pub fn objective(&self) -> u64 {
        self.loads.iter().map(|&l| (l * l) as u64).sum()
    }

    /// Checks that every session gets exactly its charge inside its window
    /// and that no slot exceeds the station count.
    pub fn check(&self, day: &DayArrivals, cfg: &MdpConfig) -> Result<()> {
        let sessions: Vec<_> = day.sessions().collect();
        if sessions.len() != self.patterns.len() {
            return Err(Error::MalformedSession(format!(
                "{} patterns for {} sessions",
                self.patterns.len(),
                sessions.len()
            )));
        }
        for (k, (s, p)) in sessions.iter().zip(&self.patterns).enumerate() {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            sorted.dedup();
            let inside = sorted
                .iter()
                .all(|t| (s.arrival_slot..=s.last_slot()).contains(t));
            if sorted.len() != p.len() || !inside {
                return Err(Error::MalformedSession(format!(
                    "pattern {p:?} outside window of {s:?}"
                )));
            }
            if p.len() != s.charge_slots {
                return Err(Error::UnfinishedSchedule {
                    index: k,
                    got: p.len(),
                    needed: s.charge_slots,
                });
            }
        }
        if let Some(&l) = self.loads.iter().find(|&&l| l > cfg.n_max) {
            return Err(Error::Concurrency {
                count: l,
                n_max: cfg.n_max,
            });
        }
        Ok(())
    }
}

/// Charges every session from arrival until its demand is met.
pub fn bau_schedule(day: &DayArrivals, cfg: &MdpConfig) -> DaySchedule {
    let patterns = day
        .sessions()
        .map(|s| (s.arrival_slot..s.arrival_slot + s.charge_slots).collect())
        .collect();
    DaySchedule::from_patterns(patterns, cfg.s_max)
}

/// Marks the first `count` multiples of `step` in `1..=d`, then fills from
/// the end of the window if the multiples run out.
fn spread(d: usize, count: usize, step: usize) -> Vec<bool> {
    let mut marked = vec![false; d];
    let mut placed = 0;
    let mut pos = step;
    while placed < count && pos <= d {
        marked[pos - 1] = true;
        placed += 1;
        pos += step;
    }
    for slot in marked.iter_mut().rev() {
        if placed == count {
            break;
        }
        if !*slot {
            *slot = true;
            placed += 1;
        }
    }
    marked
}

/// Heuristic charge pattern relative to arrival: `true` means charge.
///
/// With `c >= d/2` the `d - c` idle slots go to the first multiples of
/// `floor(d / (d - c + 1))`; with `c < d/2` the `c` charge slots go to the
/// first multiples of `floor(d / (c + 1))`.
pub fn heuristic_pattern(d: usize, c: usize) -> Vec<bool> {
    assert!(
        c >= 1 && c <= d,
        "heuristic needs 1 <= c <= d, got c={c}, d={d}"
    );
    if 2 * c >= d {
        let idle = d - c;
        let step = d / (idle + 1);
        spread(d, idle, step).into_iter().map(|n| !n).collect()
    } else {
        spread(d, c, d / (c + 1))
    }
}

pub fn heuristic_session(s: &EvSession) -> Vec<usize> {
    heuristic_pattern(s.duration_slots, s.charge_slots)
        .into_iter()
        .enumerate()
        .filter(|(_, on)| *on)
        .map(|(k, _)| s.arrival_slot + k)
        .collect()
}

pub fn heuristic_schedule(day: &DayArrivals, cfg: &MdpConfig) -> DaySchedule {
    DaySchedule::from_patterns(day.sessions().map(heuristic_session).collect(), cfg.s_max)
}

/// Min-cost flow by successive shortest paths with Dijkstra on reduced costs.
struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<i64>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            adj: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
            cost: Vec::new(),
        }
    }

    /// Adds `u -> v` and its residual twin; returns the forward edge id.
    fn edge(&mut self, u: usize, v: usize, cap: i64, cost: i64) -> usize {
        let e = self.to.len();
        self.adj[u].push(e);
        self.to.push(v);
        self.cap.push(cap);
        self.cost.push(cost);
        self.adj[v].push(e + 1);
        self.to.push(u);
        self.cap.push(0);
        self.cost.push(-cost);
        e
    }

    /// Sends up to `demand` units from `s` to `t`; returns (flow, cost).
    /// Edge costs must be nonnegative so zero potentials are feasible.
    fn min_cost_flow(&mut self, s: usize, t: usize, demand: i64) -> (i64, i64) {
        let n = self.adj.len();
        let mut potential = vec![0i64; n];
        let (mut flow, mut total) = (0, 0);
        while flow < demand {
            let mut dist = vec![i64::MAX; n];
            let mut via = vec![usize::MAX; n];
            let mut heap = BinaryHeap::new();
            dist[s] = 0;
            heap.push(Reverse((0i64, s)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &e in &self.adj[u] {
                    if self.cap[e] == 0 {
                        continue;
                    }
                    let v = self.to[e];
                    let nd = d + self.cost[e] + potential[u] - potential[v];
                    if nd < dist[v] {
                        dist[v] = nd;
                        via[v] = e;
                        heap.push(Reverse((nd, v)));
                    }
                }
            }
            if dist[t] == i64::MAX {
                break;
            }
            for v in 0..n {
                if dist[v] != i64::MAX {
                    potential[v] += dist[v];
                }
            }
            let mut push = demand - flow;
            let mut v = t;
            while v != s {
                let e = via[v];
                push = push.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = via[v];
                self.cap[e] -= push;
                self.cap[e ^ 1] += push;
                total += push * self.cost[e];
                v = self.to[e ^ 1];
            }
            flow += push;
        }
        (flow, total)
    }
}

/// Perfect-knowledge schedule minimizing the sum of squared slot loads.
///
/// Each unit of charge flows source -> session -> slot -> sink. A slot
/// reaches the sink through unit edges costing 1, 3, 5, ..., so pushing `L`
/// units through it costs `L^2`; with convex marginal costs the integral
/// min-cost flow is the exact optimum.
pub fn optimal_schedule(day: &DayArrivals, cfg: &MdpConfig) -> Result<DaySchedule> {
    let sessions: Vec<_> = day.sessions().copied().collect();
    let n = sessions.len();
    let slot_node = |t: usize| 1 + n + (t - 1);
    let sink = 1 + n + cfg.s_max;
    let mut g = FlowGraph::new(sink + 1);
    let mut session_edges = Vec::with_capacity(n);
    let mut demand = 0i64;
    for (k, s) in sessions.iter().enumerate() {
        if s.charge_slots > s.duration_slots || s.last_slot() > cfg.s_max || s.arrival_slot == 0 {
            return Err(Error::MalformedSession(format!("{s:?}")));
        }
        g.edge(0, 1 + k, s.charge_slots as i64, 0);
        demand += s.charge_slots as i64;
        let edges: Vec<(usize, usize)> = (s.arrival_slot..=s.last_slot())
            .map(|t| (t, g.edge(1 + k, slot_node(t), 1, 0)))
            .collect();
        session_edges.push(edges);
    }
    for t in 1..=cfg.s_max {
        for k in 1..=cfg.n_max {
            g.edge(slot_node(t), sink, 1, 2 * k as i64 - 1);
        }
    }
    let (flow, cost) = g.min_cost_flow(0, sink, demand);
    if flow != demand {
        return Err(Error::Concurrency {
            count: demand as usize,
            n_max: cfg.n_max,
        });
    }
    let patterns = session_edges
        .iter()
        .map(|edges| {
            edges
                .iter()
                .filter(|(_, e)| g.cap[*e] == 0)
                .map(|(t, _)| *t)
                .collect()
        })
        .collect();
    let schedule = DaySchedule::from_patterns(patterns, cfg.s_max);
    debug_assert_eq!(schedule.objective() as i64, cost);
    Ok(schedule)
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn combinations(window: std::ops::RangeInclusive<usize>, k: usize) -> Vec<Vec<usize>> {
    fn rec(
        items: &[usize],
        k: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let items: Vec<usize> = window.collect();
    let mut out = Vec::new();
    rec(&items, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Default bound on the number of joint assignments [`brute_force_schedule`]
/// will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Global minimizer found by enumerating every combination of per-session
/// charge slots. Refuses instances with more than `limit` combinations.
pub fn brute_force_schedule(
    day: &DayArrivals,
    cfg: &MdpConfig,
    limit: u128,
) -> Result<DaySchedule> {
    let sessions: Vec<_> = day.sessions().copied().collect();
    let size = sessions.iter().fold(1u128, |acc, s| {
        acc.saturating_mul(binomial(s.duration_slots, s.charge_slots))
    });
    if size > limit {
        return Err(Error::SearchTooLarge { size, limit });
    }
    let options: Vec<Vec<Vec<usize>>> = sessions
        .iter()
        .map(|s| combinations(s.arrival_slot..=s.last_slot(), s.charge_slots))
        .collect();

    struct Search<'a> {
        options: &'a [Vec<Vec<usize>>],
        loads: Vec<usize>,
        choice: Vec<usize>,
        best: Option<(u64, Vec<usize>)>,
    }
    impl Search<'_> {
        fn run(&mut self, k: usize) {
            if k == self.options.len() {
                let obj = self.loads.iter().map(|&l| (l * l) as u64).sum();
                if self.best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    self.best = Some((obj, self.choice.clone()));
                }
                return;
            }
            for (i, slots) in self.options[k].iter().enumerate() {
                slots.iter().for_each(|&t| self.loads[t - 1] += 1);
                self.choice[k] = i;
                self.run(k + 1);
                slots.iter().for_each(|&t| self.loads[t - 1] -= 1);
            }
        }
    }
    let mut search = Search {
        options: &options,
        loads: vec![0; cfg.s_max],
        choice: vec![0; sessions.len()],
        best: None,
    };
    search.run(0);
    let (_, choice) = search.best.expect("at least the empty assignment");
    let patterns = choice
        .iter()
        .zip(&options)
        .map(|(&i, o)| o[i].clone())
        .collect();
    Ok(DaySchedule::from_patterns(patterns, cfg.s_max))
}
