//! Batch experience sets built from random-action day trajectories.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    action_space_size, diagonal_totals, enumerate_actions, sample_action, transition,
    transition_cost, Action, CostMode, Fleet, MdpConfig, StateMatrix,
};
use crate::seeds;
use crate::sessions::DayArrivals;

/// One `(s, u, s', cost)` record.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceTuple {
    pub day: usize,
    pub trajectory: usize,
    pub s: StateMatrix,
    pub u: Action,
    pub s_next: StateMatrix,
    pub cost: f64,
    pub terminal: bool,
}

impl ExperienceTuple {
    /// Cost implied by `(s, u)` under `mode`. Arrivals do not enter the cost,
    /// so the successor is not needed.
    pub fn recompute_cost(&self, mode: CostMode, cfg: &MdpConfig) -> Result<f64> {
        let outcome = transition(&self.s, &self.u, &[], cfg)?;
        Ok(transition_cost(&self.u, &outcome, mode, cfg))
    }
}

/// Where an experience set came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub days: Vec<usize>,
    pub n_traj: usize,
    pub seed: u64,
    /// Distinct trajectories actually collected, per day.
    pub collected: Vec<usize>,
}

impl Provenance {
    /// Days that yielded fewer than `n_traj` distinct trajectories.
    pub fn under_collected(&self) -> usize {
        self.collected.iter().filter(|&&c| c < self.n_traj).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceSet {
    pub mode: CostMode,
    pub s_max: usize,
    pub n_max: usize,
    pub tuples: Vec<ExperienceTuple>,
    pub provenance: Provenance,
}

impl ExperienceSet {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn trajectories(&self) -> usize {
        self.provenance.collected.iter().sum()
    }
}

fn pick_action<R: Rng + ?Sized>(
    state: &StateMatrix,
    mode: CostMode,
    cfg: &MdpConfig,
    rng: &mut R,
) -> (Action, bool) {
    let totals = diagonal_totals(state);
    match enumerate_actions(&totals, mode, cfg.action_cap) {
        Ok(mut actions) => {
            let forced = actions.len() == 1;
            let k = rng.gen_range(0..actions.len());
            (actions.swap_remove(k), forced)
        }
        // Uniform over the product space without materializing it.
        Err(_) => (sample_action(&totals, mode, rng), false),
    }
}

fn rollout<R: Rng + ?Sized>(
    day: &DayArrivals,
    mode: CostMode,
    cfg: &MdpConfig,
    trajectory: usize,
    rng: &mut R,
) -> Result<(Vec<ExperienceTuple>, bool)> {
    let mut fleet = Fleet::new(1, cfg);
    fleet.admit(&day.tracked_at(1))?;
    let mut tuples = Vec::with_capacity(cfg.s_max);
    let mut all_forced = true;
    for t in 1..=cfg.s_max {
        let s = fleet.state();
        let (u, forced) = pick_action(&s, mode, cfg, rng);
        all_forced &= forced;
        let report = fleet.step(&u, &day.tracked_at(t + 1))?;
        let outcome = report.outcome(fleet.state());
        let cost = transition_cost(&u, &outcome, mode, cfg);
        tuples.push(ExperienceTuple {
            day: day.day,
            trajectory,
            terminal: outcome.next_state.is_terminal(),
            s,
            u,
            s_next: outcome.next_state,
            cost,
        });
    }
    Ok((tuples, all_forced))
}

/// Rolls one day forward from slot 1 with uniformly random actions, emitting
/// exactly `s_max` tuples; the last one is terminal.
pub fn sample_trajectory<R: Rng + ?Sized>(
    day: &DayArrivals,
    mode: CostMode,
    cfg: &MdpConfig,
    rng: &mut R,
) -> Result<Vec<ExperienceTuple>> {
    rollout(day, mode, cfg, 0, rng).map(|(t, _)| t)
}

fn collect_day(
    day: &DayArrivals,
    n_traj: usize,
    mode: CostMode,
    cfg: &MdpConfig,
    seed: u64,
) -> Result<(Vec<ExperienceTuple>, usize)> {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut tuples = Vec::new();
    for attempt in 0..10 * n_traj {
        let mut rng = seeds::rng(seed, &[day.day as u64, attempt as u64]);
        let (traj, all_forced) = rollout(day, mode, cfg, seen.len(), &mut rng)?;
        let key: Vec<usize> = traj
            .iter()
            .flat_map(|x| x.u.counts().iter().copied())
            .collect();
        if seen.insert(key) {
            tuples.extend(traj);
        }
        // Forced actions at every step leave exactly one trajectory.
        if seen.len() == n_traj || all_forced {
            break;
        }
    }
    Ok((tuples, seen.len()))
}

/// Collects up to `n_traj` distinct trajectories per day (distinct by action
/// sequence), giving up on a day after `10 * n_traj` attempts. Attempt `a` of
/// day `e` uses the stream derived from `(seed, e, a)`, so the result does not
/// depend on scheduling.
pub fn build_experience_set(
    days: &[DayArrivals],
    n_traj: usize,
    mode: CostMode,
    cfg: &MdpConfig,
    seed: u64,
) -> Result<ExperienceSet> {
    if n_traj == 0 {
        return Err(Error::config("n_traj", "must be at least 1"));
    }
    if days.is_empty() {
        return Err(Error::Empty("training days"));
    }
    let per_day: Vec<_> = days
        .par_iter()
        .map(|day| collect_day(day, n_traj, mode, cfg, seed))
        .collect::<Result<_>>()?;
    let mut tuples = Vec::with_capacity(per_day.iter().map(|(t, _)| t.len()).sum());
    let mut collected = Vec::with_capacity(days.len());
    for (t, c) in per_day {
        tuples.extend(t);
        collected.push(c);
    }
    Ok(ExperienceSet {
        mode,
        s_max: cfg.s_max,
        n_max: cfg.n_max,
        tuples,
        provenance: Provenance {
            days: days.iter().map(|d| d.day).collect(),
            n_traj,
            seed,
            collected,
        },
    })
}

/// Every trajectory of the day's decision tree, in lexicographic action
/// order. Only for tiny worlds: refuses trees with more than `limit` leaves.
pub fn exhaustive_experience_set(
    day: &DayArrivals,
    mode: CostMode,
    cfg: &MdpConfig,
    limit: usize,
) -> Result<ExperienceSet> {
    struct Walk<'a> {
        day: &'a DayArrivals,
        mode: CostMode,
        cfg: &'a MdpConfig,
        limit: usize,
        prefix: Vec<ExperienceTuple>,
        out: Vec<ExperienceTuple>,
        count: usize,
    }

    impl Walk<'_> {
        fn visit(&mut self, fleet: &Fleet) -> Result<()> {
            if fleet.t() > self.cfg.s_max {
                self.count += 1;
                if self.count > self.limit {
                    return Err(Error::SearchTooLarge {
                        size: self.count as u128,
                        limit: self.limit as u128,
                    });
                }
                for mut t in self.prefix.iter().cloned() {
                    t.trajectory = self.count - 1;
                    self.out.push(t);
                }
                return Ok(());
            }
            let s = fleet.state();
            for u in enumerate_actions(&diagonal_totals(&s), self.mode, self.cfg.action_cap)? {
                let mut next = fleet.clone();
                let report = next.step(&u, &self.day.tracked_at(fleet.t() + 1))?;
                let outcome = report.outcome(next.state());
                self.prefix.push(ExperienceTuple {
                    day: self.day.day,
                    trajectory: 0,
                    s: s.clone(),
                    cost: transition_cost(&u, &outcome, self.mode, self.cfg),
                    terminal: outcome.next_state.is_terminal(),
                    s_next: outcome.next_state,
                    u,
                });
                self.visit(&next)?;
                self.prefix.pop();
            }
            Ok(())
        }
    }

    let mut fleet = Fleet::new(1, cfg);
    fleet.admit(&day.tracked_at(1))?;
    let mut walk = Walk {
        day,
        mode,
        cfg,
        limit,
        prefix: Vec::new(),
        out: Vec::new(),
        count: 0,
    };
    walk.visit(&fleet)?;
    let (tuples, count) = (walk.out, walk.count);
    Ok(ExperienceSet {
        mode,
        s_max: cfg.s_max,
        n_max: cfg.n_max,
        tuples,
        provenance: Provenance {
            days: vec![day.day],
            n_traj: count,
            seed: 0,
            collected: vec![count],
        },
    })
}

/// Number of distinct trajectories in a day's decision tree. Walks the whole
/// tree; tiny worlds only.
pub fn count_trajectories(day: &DayArrivals, mode: CostMode, cfg: &MdpConfig) -> Result<u128> {
    fn walk(fleet: &Fleet, day: &DayArrivals, mode: CostMode, cfg: &MdpConfig) -> Result<u128> {
        if fleet.t() > cfg.s_max {
            return Ok(1);
        }
        let totals = diagonal_totals(&fleet.state());
        if action_space_size(&totals, mode) > cfg.action_cap as u128 {
            return Err(Error::ActionCapExceeded {
                size: action_space_size(&totals, mode),
                cap: cfg.action_cap,
            });
        }
        let mut total = 0u128;
        for u in enumerate_actions(&totals, mode, cfg.action_cap)? {
            let mut next = fleet.clone();
            next.step(&u, &day.tracked_at(fleet.t() + 1))?;
            total = total.saturating_add(walk(&next, day, mode, cfg)?);
        }
        Ok(total)
    }
    let mut fleet = Fleet::new(1, cfg);
    fleet.admit(&day.tracked_at(1))?;
    walk(&fleet, day, mode, cfg)
}

const MAGIC: &str = "# evflex experience v1";

fn encode_bins(s: &StateMatrix) -> String {
    let mut out = String::new();
    for (car, n) in s.bins() {
        if !out.is_empty() {
            out.push(' ');
        }
        let _ = write!(out, "{}:{}:{}", car.depart, car.charge, n);
    }
    out
}

fn decode_bins(text: &str, t: usize, cfg: &MdpConfig) -> Result<StateMatrix> {
    let mut counts = vec![0u8; cfg.s_max * cfg.s_max];
    for item in text.split_whitespace() {
        let parts: Vec<usize> = item
            .split(':')
            .map(|p| {
                p.parse()
                    .map_err(|_| Error::MalformedSession(format!("bad bin {item:?}")))
            })
            .collect::<Result<_>>()?;
        let [i, j, n] = parts[..] else {
            return Err(Error::MalformedSession(format!("bad bin {item:?}")));
        };
        if !(1..=cfg.s_max).contains(&i) || !(1..=cfg.s_max).contains(&j) || n > u8::MAX as usize {
            return Err(Error::MalformedSession(format!("bad bin {item:?}")));
        }
        counts[(i - 1) * cfg.s_max + (j - 1)] = n as u8;
    }
    StateMatrix::from_counts(t, cfg, counts)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn split_list(text: &str) -> Result<Vec<usize>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|p| {
            p.parse()
                .map_err(|_| Error::MalformedSession(format!("bad list entry {p:?}")))
        })
        .collect()
}

/// Writes the set as CSV preceded by `# key=value` provenance lines.
///
/// Columns: `day,trajectory,t,state,action,next_state,cost,terminal`. States
/// are space-separated `depart:charge:count` triples, actions are
/// `;`-separated per-diagonal counts and costs use shortest round-trip
/// decimal form.
pub fn write_experience_csv<W: Write>(mut w: W, set: &ExperienceSet) -> Result<()> {
    let io = |e| Error::io("<experience csv>", e);
    writeln!(w, "{MAGIC}").map_err(io)?;
    writeln!(w, "# mode={}", set.mode).map_err(io)?;
    writeln!(w, "# s_max={}", set.s_max).map_err(io)?;
    writeln!(w, "# n_max={}", set.n_max).map_err(io)?;
    writeln!(w, "# n_traj={}", set.provenance.n_traj).map_err(io)?;
    writeln!(w, "# seed={}", set.provenance.seed).map_err(io)?;
    writeln!(w, "# days={}", join(&set.provenance.days)).map_err(io)?;
    writeln!(w, "# collected={}", join(&set.provenance.collected)).map_err(io)?;
    let mut csv = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    csv.write_record([
        "day",
        "trajectory",
        "t",
        "state",
        "action",
        "next_state",
        "cost",
        "terminal",
    ])?;
    for x in &set.tuples {
        csv.write_record([
            x.day.to_string(),
            x.trajectory.to_string(),
            x.s.t().to_string(),
            encode_bins(&x.s),
            join(x.u.counts()),
            encode_bins(&x.s_next),
            x.cost.to_string(),
            u8::from(x.terminal).to_string(),
        ])?;
    }
    csv.flush().map_err(io)?;
    Ok(())
}

pub fn read_experience_csv<R: Read>(r: R, base: &MdpConfig) -> Result<ExperienceSet> {
    let mut reader = BufReader::new(r);
    let mut header = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::io("<experience csv>", e))?;
        if n == 0 || !line.starts_with('#') {
            break;
        }
        header.push(line.trim_end().to_string());
    }
    if header.first().map(String::as_str) != Some(MAGIC) {
        return Err(Error::MalformedSession("missing experience header".into()));
    }
    let field = |key: &str| -> Result<String> {
        header
            .iter()
            .find_map(|h| {
                h.strip_prefix("# ")
                    .and_then(|kv| kv.strip_prefix(key))
                    .and_then(|v| v.strip_prefix('='))
            })
            .map(str::to_string)
            .ok_or_else(|| Error::MalformedSession(format!("missing header field {key}")))
    };
    let num = |key: &str| -> Result<u64> {
        field(key)?
            .parse()
            .map_err(|_| Error::MalformedSession(format!("bad header field {key}")))
    };
    let mode: CostMode = field("mode")?.parse()?;
    let s_max = num("s_max")? as usize;
    let n_max = num("n_max")? as usize;
    let cfg = MdpConfig {
        s_max,
        n_max,
        ..*base
    };
    cfg.validate()?;
    let provenance = Provenance {
        days: split_list(&field("days")?)?,
        n_traj: num("n_traj")? as usize,
        seed: num("seed")?,
        collected: split_list(&field("collected")?)?,
    };

    // `line` holds the CSV header row already consumed above.
    let rest = std::io::Cursor::new(line.into_bytes()).chain(reader);
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(rest);
    let mut tuples = Vec::new();
    for rec in csv.records() {
        let rec = rec?;
        let bad = |what: &str| {
            Error::MalformedSession(format!("bad {what} in experience row {:?}", rec.position()))
        };
        let int = |k: usize, what: &str| rec[k].parse::<usize>().map_err(|_| bad(what));
        let t = int(2, "t")?;
        tuples.push(ExperienceTuple {
            day: int(0, "day")?,
            trajectory: int(1, "trajectory")?,
            s: decode_bins(&rec[3], t, &cfg)?,
            u: Action::new(split_list(&rec[4])?),
            s_next: decode_bins(&rec[5], t + 1, &cfg)?,
            cost: rec[6].parse().map_err(|_| bad("cost"))?,
            terminal: &rec[7] == "1",
        });
    }
    Ok(ExperienceSet {
        mode,
        s_max,
        n_max,
        tuples,
        provenance,
    })
}
