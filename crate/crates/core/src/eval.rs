//! Day costs, normalized cost against the perfect-knowledge optimum,
//! flexibility utilization and training-time benchmarking.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{bau_schedule, heuristic_schedule, optimal_schedule, DaySchedule};
use crate::calendar::{training_period, DayRange};
use crate::error::{Error, Result};
use crate::experience::build_experience_set;
use crate::fqi::fit_fqi;
use crate::mdp::{CostMode, MdpConfig};
use crate::nn::NetSpec;
use crate::policy::{simulate_day, Policy};
use crate::scalar::Scalar;
use crate::sessions::{sessions_for_day, DayArrivals, EvSession};

/// Demand cost of a whole day: `sum_t (load_t / n_max)^2`. The squares are
/// summed exactly, so schedules with permuted loads cost the same.
pub fn day_cost<T: Scalar>(loads: &[usize], cfg: &MdpConfig) -> T {
    let squares: usize = loads.iter().map(|&l| l * l).sum();
    T::of_usize(squares) / T::of_usize(cfg.n_max * cfg.n_max)
}

/// Mean over days of `policy / optimal`, skipping days whose optimum is 0
/// (no demand). Fails when no day remains.
pub fn normalized_cost(policy: &[f64], optimal: &[f64]) -> Result<f64> {
    if policy.len() != optimal.len() {
        return Err(Error::config(
            "evaluation",
            "policy and optimal cost lists differ in length",
        ));
    }
    let ratios: Vec<f64> = policy
        .iter()
        .zip(optimal)
        .filter(|(_, &o)| o > 0.0)
        .map(|(&p, &o)| p / o)
        .collect();
    if ratios.is_empty() {
        return Err(Error::Empty("test days with demand"));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Flexibility used by one fully charged session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionFlex {
    /// Charge slots moved past the charge-on-arrival window, over the most
    /// that could be moved, `min(c, d - c)`.
    pub e_flex: f64,
    /// Completion delay against charge-on-arrival, over the slack `d - c`.
    pub t_flex: f64,
}

/// `None` for sessions without slack.
pub fn session_flex(s: &EvSession, charged: &[usize]) -> Result<Option<SessionFlex>> {
    if charged.len() != s.charge_slots {
        return Err(Error::UnfinishedSchedule {
            index: s.station_id,
            got: charged.len(),
            needed: s.charge_slots,
        });
    }
    let slack = s.duration_slots - s.charge_slots;
    if slack == 0 {
        return Ok(None);
    }
    let bau_end = s.arrival_slot + s.charge_slots - 1;
    let deferred = charged.iter().filter(|&&t| t > bau_end).count();
    let last = charged.iter().copied().max().unwrap_or(bau_end);
    Ok(Some(SessionFlex {
        e_flex: deferred as f64 / s.charge_slots.min(slack) as f64,
        t_flex: last.saturating_sub(bau_end) as f64 / slack as f64,
    }))
}

/// Mean flexibility of the sessions arriving in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFlex {
    pub arrival_slot: usize,
    pub sessions: usize,
    pub e_flex: Option<f64>,
    pub t_flex: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexSummary {
    pub per_slot: Vec<SlotFlex>,
    /// Sessions with slack that entered the means.
    pub sessions: usize,
    pub mean_e_flex: Option<f64>,
    pub mean_t_flex: Option<f64>,
}

/// Groups per-session flexibility by arrival slot. Sessions without slack
/// are left out; unfinished sessions are an error.
pub fn flexibility_metrics<'a, I>(items: I, s_max: usize) -> Result<FlexSummary>
where
    I: IntoIterator<Item = (&'a EvSession, &'a [usize])>,
{
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); s_max];
    for (s, charged) in items {
        if let Some(f) = session_flex(s, charged)? {
            let e = &mut sums[s.arrival_slot - 1];
            e.0 += 1;
            e.1 += f.e_flex;
            e.2 += f.t_flex;
        }
    }
    let mean = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
    let per_slot = sums
        .iter()
        .enumerate()
        .map(|(k, &(n, e, t))| SlotFlex {
            arrival_slot: k + 1,
            sessions: n,
            e_flex: mean(e, n),
            t_flex: mean(t, n),
        })
        .collect();
    let n: usize = sums.iter().map(|x| x.0).sum();
    Ok(FlexSummary {
        per_slot,
        sessions: n,
        mean_e_flex: mean(sums.iter().map(|x| x.1).sum(), n),
        mean_t_flex: mean(sums.iter().map(|x| x.2).sum(), n),
    })
}

/// Policies compared in an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    RlUpdated,
    RlOld,
    Bau,
    Heuristic,
    Optimal,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::RlUpdated => "rl_updated",
            PolicyKind::RlOld => "rl_old",
            PolicyKind::Bau => "bau",
            PolicyKind::Heuristic => "heuristic",
            PolicyKind::Optimal => "optimal",
        }
    }

    pub fn rl(mode: CostMode) -> Self {
        match mode {
            CostMode::Old => PolicyKind::RlOld,
            CostMode::Updated => PolicyKind::RlUpdated,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub day: usize,
    pub policy: PolicyKind,
    pub cost: f64,
    /// Charge slots left undelivered; only RL policies can strand demand.
    pub shortfall_slots: usize,
}

/// Outcome of comparing policies over a test window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub test_days: Vec<usize>,
    /// Days left out of the normalized cost because nothing had to charge.
    pub excluded_days: Vec<usize>,
    pub days: Vec<DayResult>,
    pub normalized: BTreeMap<PolicyKind, f64>,
    pub flex: BTreeMap<PolicyKind, FlexSummary>,
    /// Sessions left out of a policy's flexibility metrics for leaving with
    /// unmet demand.
    pub unfinished_sessions: BTreeMap<PolicyKind, usize>,
    pub provenance: BTreeMap<String, String>,
}

impl EvaluationReport {
    pub fn day_costs(&self, policy: PolicyKind) -> Vec<f64> {
        self.days
            .iter()
            .filter(|r| r.policy == policy)
            .map(|r| r.cost)
            .collect()
    }

    pub fn total_shortfall(&self, policy: PolicyKind) -> usize {
        self.days
            .iter()
            .filter(|r| r.policy == policy)
            .map(|r| r.shortfall_slots)
            .sum()
    }

    /// One row per (day, policy): `day,policy,cost,shortfall_slots`.
    pub fn write_costs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv_writer(w);
        csv.write_record(["day", "policy", "cost", "shortfall_slots"])?;
        for r in &self.days {
            csv.write_record([
                r.day.to_string(),
                r.policy.to_string(),
                r.cost.to_string(),
                r.shortfall_slots.to_string(),
            ])?;
        }
        csv.flush().map_err(|e| Error::io("<costs csv>", e))
    }

    /// `policy,normalized_cost,days`.
    pub fn write_normalized_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv_writer(w);
        csv.write_record(["policy", "normalized_cost", "days"])?;
        let days = (self.test_days.len() - self.excluded_days.len()).to_string();
        for (p, c) in &self.normalized {
            csv.write_record([p.to_string(), c.to_string(), days.clone()])?;
        }
        csv.flush().map_err(|e| Error::io("<normalized csv>", e))
    }

    /// `policy,arrival_slot,sessions,e_flex,t_flex`; empty cells where no
    /// session with slack arrived.
    pub fn write_flex_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv_writer(w);
        csv.write_record(["policy", "arrival_slot", "sessions", "e_flex", "t_flex"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (p, f) in &self.flex {
            for s in &f.per_slot {
                csv.write_record([
                    p.to_string(),
                    s.arrival_slot.to_string(),
                    s.sessions.to_string(),
                    opt(s.e_flex),
                    opt(s.t_flex),
                ])?;
            }
        }
        csv.flush().map_err(|e| Error::io("<flex csv>", e))
    }
}

pub(crate) fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

struct DayEval {
    day: usize,
    schedules: Vec<(PolicyKind, DaySchedule, usize)>,
}

fn evaluate_day(
    day: &DayArrivals,
    rl: &[(PolicyKind, &(dyn Policy + Sync))],
    cfg: &MdpConfig,
) -> Result<DayEval> {
    let mut schedules = Vec::with_capacity(rl.len() + 3);
    for &(kind, policy) in rl {
        let r = simulate_day(policy, day, cfg)?;
        schedules.push((kind, DaySchedule::from_rollout(&r), r.shortfall_slots));
    }
    schedules.push((PolicyKind::Bau, bau_schedule(day, cfg), 0));
    schedules.push((PolicyKind::Heuristic, heuristic_schedule(day, cfg), 0));
    schedules.push((PolicyKind::Optimal, optimal_schedule(day, cfg)?, 0));
    Ok(DayEval {
        day: day.day,
        schedules,
    })
}

/// Runs every RL policy through each test day (arrivals revealed slot by
/// slot), computes the baseline schedules, and aggregates costs and
/// flexibility. Days are evaluated in parallel; results keep day order.
pub fn evaluate(
    test_days: &[DayArrivals],
    rl: &[(PolicyKind, &(dyn Policy + Sync))],
    cfg: &MdpConfig,
    provenance: BTreeMap<String, String>,
) -> Result<EvaluationReport> {
    if test_days.is_empty() {
        return Err(Error::Empty("test days"));
    }
    let evals: Vec<DayEval> = test_days
        .par_iter()
        .map(|d| evaluate_day(d, rl, cfg))
        .collect::<Result<_>>()?;

    let mut days = Vec::new();
    let mut excluded_days = Vec::new();
    let mut per_policy: BTreeMap<PolicyKind, Vec<f64>> = BTreeMap::new();
    for e in &evals {
        for (kind, sched, shortfall) in &e.schedules {
            let cost = day_cost::<f64>(&sched.loads, cfg);
            per_policy.entry(*kind).or_default().push(cost);
            days.push(DayResult {
                day: e.day,
                policy: *kind,
                cost,
                shortfall_slots: *shortfall,
            });
        }
        let opt = e
            .schedules
            .iter()
            .find(|s| s.0 == PolicyKind::Optimal)
            .expect("optimal computed");
        if opt.1.objective() == 0 {
            excluded_days.push(e.day);
        }
    }
    let optimal = per_policy[&PolicyKind::Optimal].clone();
    let normalized = per_policy
        .iter()
        .map(|(k, costs)| Ok((*k, normalized_cost(costs, &optimal)?)))
        .collect::<Result<_>>()?;

    let mut flex = BTreeMap::new();
    let mut unfinished_sessions = BTreeMap::new();
    for kind in per_policy.keys() {
        let mut items = Vec::new();
        let mut unfinished = 0;
        for (day, e) in test_days.iter().zip(&evals) {
            let sched = &e
                .schedules
                .iter()
                .find(|s| s.0 == *kind)
                .expect("every policy ran")
                .1;
            for (s, p) in day.sessions().zip(&sched.patterns) {
                if p.len() == s.charge_slots {
                    items.push((s, p.as_slice()));
                } else {
                    unfinished += 1;
                }
            }
        }
        flex.insert(*kind, flexibility_metrics(items, cfg.s_max)?);
        unfinished_sessions.insert(*kind, unfinished);
    }

    Ok(EvaluationReport {
        test_days: test_days.iter().map(|d| d.day).collect(),
        excluded_days,
        days,
        normalized,
        flex,
        unfinished_sessions,
        provenance,
    })
}

/// Axes of a training-time benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    /// Reference and candidate arms; reduction is `1 - candidate / reference`.
    pub arms: [CostMode; 2],
    pub n_traj: Vec<usize>,
    pub months: Vec<usize>,
    /// Training periods drawn per (N_traj, months) cell.
    pub repetitions: usize,
    /// Seed for period selection and experience sampling.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub arm: usize,
    pub mode: CostMode,
    pub n_traj: usize,
    pub months: usize,
    pub repetition: usize,
    pub period: DayRange,
    pub tuples: usize,
    pub experience_secs: f64,
    pub fqi_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub n_traj: usize,
    pub months: usize,
    pub mean_reference_secs: f64,
    pub mean_candidate_secs: f64,
    /// `1 - mean_candidate / mean_reference`.
    pub reduction: f64,
    /// Spread of the per-repetition reductions.
    pub reduction_min: f64,
    pub reduction_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: BenchSpec,
    pub cells: Vec<BenchCell>,
    pub summary: Vec<BenchSummary>,
}

impl BenchReport {
    /// One row per timed run.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv_writer(w);
        csv.write_record([
            "mode",
            "arm",
            "n_traj",
            "months",
            "repetition",
            "period_start",
            "period_end",
            "tuples",
            "experience_secs",
            "fqi_secs",
            "total_secs",
        ])?;
        for c in &self.cells {
            csv.write_record([
                c.mode.to_string(),
                c.arm.to_string(),
                c.n_traj.to_string(),
                c.months.to_string(),
                c.repetition.to_string(),
                c.period.start.to_string(),
                c.period.end.to_string(),
                c.tuples.to_string(),
                format!("{:.6}", c.experience_secs),
                format!("{:.6}", c.fqi_secs),
                format!("{:.6}", c.total_secs),
            ])?;
        }
        csv.flush().map_err(|e| Error::io("<bench csv>", e))
    }

    /// One row per (N_traj, months) cell with the relative reduction.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv_writer(w);
        csv.write_record([
            "n_traj",
            "months",
            "mean_reference_secs",
            "mean_candidate_secs",
            "reduction",
            "reduction_min",
            "reduction_max",
        ])?;
        for s in &self.summary {
            csv.write_record([
                s.n_traj.to_string(),
                s.months.to_string(),
                format!("{:.6}", s.mean_reference_secs),
                format!("{:.6}", s.mean_candidate_secs),
                format!("{:.6}", s.reduction),
                format!("{:.6}", s.reduction_min),
                format!("{:.6}", s.reduction_max),
            ])?;
        }
        csv.flush().map_err(|e| Error::io("<bench summary csv>", e))
    }
}

/// Wall-clock of experience generation plus FQI for one mode on one period.
fn time_training<T: Scalar>(
    days: &[DayArrivals],
    n_traj: usize,
    mode: CostMode,
    cfg: &MdpConfig,
    net: &NetSpec,
    seed: u64,
) -> Result<(usize, f64, f64)> {
    let start = Instant::now();
    let set = build_experience_set(days, n_traj, mode, cfg, seed)?;
    let experience_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    fit_fqi::<T>(&set, cfg, net)?;
    Ok((set.len(), experience_secs, start.elapsed().as_secs_f64()))
}

/// Times experience generation plus FQI for both arms over every grid cell
/// and repetition. Runs serially on one worker thread; the first run is
/// repeated once up front and discarded as warm-up.
pub fn run_benchmark<T: Scalar>(
    sessions: &[EvSession],
    spec: &BenchSpec,
    cfg: &MdpConfig,
    net: &NetSpec,
) -> Result<BenchReport> {
    if spec.n_traj.is_empty() || spec.months.is_empty() {
        return Err(Error::config("bench", "grid axes must be nonempty"));
    }
    if spec.repetitions == 0 {
        return Err(Error::config("bench.repetitions", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::config("bench", e.to_string()))?;
    pool.install(|| {
        let days_of = |p: DayRange| -> Vec<DayArrivals> {
            p.days()
                .map(|d| sessions_for_day(sessions, d, cfg.s_max))
                .collect()
        };
        let mut cells = Vec::new();
        let mut summary = Vec::new();
        let mut warmed = false;
        for &n_traj in &spec.n_traj {
            for &months in &spec.months {
                let mut arm_secs = [Vec::new(), Vec::new()];
                for rep in 0..spec.repetitions {
                    let period = training_period(months, rep, spec.seed)?;
                    let days = days_of(period);
                    if !warmed {
                        time_training::<T>(&days, n_traj, spec.arms[0], cfg, net, spec.seed)?;
                        warmed = true;
                    }
                    for (arm, &mode) in spec.arms.iter().enumerate() {
                        let (tuples, experience_secs, fqi_secs) =
                            time_training::<T>(&days, n_traj, mode, cfg, net, spec.seed)?;
                        let total_secs = experience_secs + fqi_secs;
                        arm_secs[arm].push(total_secs);
                        cells.push(BenchCell {
                            arm,
                            mode,
                            n_traj,
                            months,
                            repetition: rep,
                            period,
                            tuples,
                            experience_secs,
                            fqi_secs,
                            total_secs,
                        });
                    }
                }
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let per_rep: Vec<f64> = arm_secs[0]
                    .iter()
                    .zip(&arm_secs[1])
                    .map(|(r, c)| 1.0 - c / r)
                    .collect();
                let (mr, mc) = (mean(&arm_secs[0]), mean(&arm_secs[1]));
                summary.push(BenchSummary {
                    n_traj,
                    months,
                    mean_reference_secs: mr,
                    mean_candidate_secs: mc,
                    reduction: 1.0 - mc / mr,
                    reduction_min: per_rep.iter().copied().fold(f64::INFINITY, f64::min),
                    reduction_max: per_rep.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
        Ok(BenchReport {
            spec: spec.clone(),
            cells,
            summary,
        })
    })
}
