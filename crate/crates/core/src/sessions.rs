//! Charging sessions: data model, seeded synthetic generator, CSV ingestion
//! and per-day slicing.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Car, MdpConfig, TrackedCar};
use crate::seeds;

/// One connection: arrives at `arrival_slot`, stays `duration_slots` and
/// needs `charge_slots` slots of charging at the common rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvSession {
    pub day: usize,
    pub arrival_slot: usize,
    pub duration_slots: usize,
    pub charge_slots: usize,
    pub station_id: usize,
}

impl EvSession {
    /// Requirements at arrival.
    pub fn as_car(&self) -> Car {
        Car::new(self.duration_slots, self.charge_slots)
    }

    /// Last slot the car is connected.
    pub fn last_slot(&self) -> usize {
        self.arrival_slot + self.duration_slots - 1
    }

    pub fn flex(&self) -> usize {
        self.duration_slots - self.charge_slots
    }

    pub fn check(&self, cfg: &MdpConfig) -> Result<()> {
        let ok = (1..=cfg.s_max).contains(&self.arrival_slot)
            && self.duration_slots >= 1
            && (1..=self.duration_slots).contains(&self.charge_slots)
            && self.last_slot() <= cfg.s_max
            && self.station_id < cfg.n_max;
        if ok {
            Ok(())
        } else {
            Err(Error::MalformedSession(format!("{self:?}")))
        }
    }
}

/// Distributions behind the synthetic session generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Categorical weights per arrival slot. Empty selects the default
    /// morning/evening profile for the configured horizon.
    pub arrival_weights: Vec<f64>,
    /// Mean of the geometric connection-duration law before truncation.
    pub mean_duration_slots: f64,
    /// Poisson mean of arrivals per day.
    pub mean_sessions_per_day: f64,
    /// Resampling attempts for an arrival that finds no free station.
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            arrival_weights: Vec::new(),
            mean_duration_slots: 4.0,
            mean_sessions_per_day: 14.0,
            max_retries: 10,
            seed: 2015,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self, mdp: &MdpConfig) -> Result<()> {
        if !self.arrival_weights.is_empty() {
            if self.arrival_weights.len() != mdp.s_max {
                return Err(Error::config(
                    "generator.arrival_weights",
                    format!(
                        "needs {} entries, got {}",
                        mdp.s_max,
                        self.arrival_weights.len()
                    ),
                ));
            }
            if self
                .arrival_weights
                .iter()
                .any(|w| !(w.is_finite() && *w >= 0.0))
            {
                return Err(Error::config(
                    "generator.arrival_weights",
                    "weights must be finite and nonnegative",
                ));
            }
            if !self.arrival_weights.iter().any(|&w| w > 0.0) {
                return Err(Error::config(
                    "generator.arrival_weights",
                    "at least one weight must be positive",
                ));
            }
        }
        if !(self.mean_duration_slots.is_finite() && self.mean_duration_slots >= 1.0) {
            return Err(Error::config(
                "generator.mean_duration_slots",
                "must be at least 1",
            ));
        }
        if !(self.mean_sessions_per_day.is_finite() && self.mean_sessions_per_day >= 0.0) {
            return Err(Error::config(
                "generator.mean_sessions_per_day",
                "must be nonnegative",
            ));
        }
        Ok(())
    }

    /// Arrival weights in effect for a horizon of `s_max` slots.
    pub fn effective_arrival_weights(&self, s_max: usize) -> Vec<f64> {
        if !self.arrival_weights.is_empty() {
            return self.arrival_weights.clone();
        }
        // Peaks around 08:00-10:00 and 18:00-20:00 on a 24 h horizon.
        let bump = |x: f64, mu: f64| (-((x - mu) / 0.08).powi(2)).exp();
        (1..=s_max)
            .map(|t| {
                let x = (t as f64 - 0.5) / s_max as f64;
                0.05 + bump(x, 0.375) + 0.8 * bump(x, 0.79)
            })
            .collect()
    }
}

/// Generator output with the number of arrivals dropped for lack of a station.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub sessions: Vec<EvSession>,
    pub truncated: usize,
}

struct Stations {
    busy: Vec<Vec<bool>>,
}

impl Stations {
    fn new(n_max: usize, s_max: usize) -> Self {
        Stations {
            busy: vec![vec![false; s_max + 1]; n_max],
        }
    }

    /// Claims the lowest-numbered station free over `first..=last`.
    fn claim(&mut self, first: usize, last: usize) -> Option<usize> {
        let id = self
            .busy
            .iter()
            .position(|slots| slots[first..=last].iter().all(|b| !b))?;
        self.busy[id][first..=last]
            .iter_mut()
            .for_each(|b| *b = true);
        Some(id)
    }
}

fn truncated_geometric_weights(mean: f64, max_d: usize) -> Vec<f64> {
    let p = 1.0 / mean;
    (0..max_d).map(|k| (1.0 - p).powi(k as i32) * p).collect()
}

fn generate_day(cfg: &GeneratorConfig, mdp: &MdpConfig, day: usize) -> (Vec<EvSession>, usize) {
    let mut rng = seeds::rng(cfg.seed, &[day as u64]);
    let n = if cfg.mean_sessions_per_day > 0.0 {
        let law = Poisson::new(cfg.mean_sessions_per_day).expect("positive mean");
        law.sample(&mut rng) as usize
    } else {
        0
    };
    let arrival =
        WeightedIndex::new(cfg.effective_arrival_weights(mdp.s_max)).expect("validated weights");
    let durations: Vec<WeightedIndex<f64>> = (1..=mdp.s_max)
        .map(|max_d| {
            WeightedIndex::new(truncated_geometric_weights(cfg.mean_duration_slots, max_d))
                .expect("positive weights")
        })
        .collect();

    let mut stations = Stations::new(mdp.n_max, mdp.s_max);
    let mut out = Vec::with_capacity(n);
    let mut truncated = 0;
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..=cfg.max_retries {
            let arrival_slot = arrival.sample(&mut rng) + 1;
            let max_d = mdp.s_max - arrival_slot + 1;
            let duration_slots = durations[max_d - 1].sample(&mut rng) + 1;
            let charge_slots = rng.gen_range(1..=duration_slots);
            if let Some(station_id) =
                stations.claim(arrival_slot, arrival_slot + duration_slots - 1)
            {
                out.push(EvSession {
                    day,
                    arrival_slot,
                    duration_slots,
                    charge_slots,
                    station_id,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            truncated += 1;
        }
    }
    out.sort_by_key(|s| (s.arrival_slot, s.station_id));
    (out, truncated)
}

/// Sessions for days `1..=n_days`. Each day draws from its own stream derived
/// from the seed, so output is independent of generation order.
pub fn generate_synthetic(
    cfg: &GeneratorConfig,
    mdp: &MdpConfig,
    n_days: usize,
) -> Result<Generated> {
    cfg.validate(mdp)?;
    if n_days == 0 {
        return Err(Error::config("n_days", "must be at least 1"));
    }
    let mut sessions = Vec::new();
    let mut truncated = 0;
    for day in 1..=n_days {
        let (s, dropped) = generate_day(cfg, mdp, day);
        sessions.extend(s);
        truncated += dropped;
    }
    Ok(Generated {
        sessions,
        truncated,
    })
}

/// Ingestion result with per-row warning counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Loaded {
    pub sessions: Vec<EvSession>,
    /// Rows whose duration or charge need was clamped.
    pub clamped_rows: usize,
    /// Rows dropped because every station was busy.
    pub dropped_rows: usize,
}

const SLOT_HEADER: [&str; 4] = ["day", "arrival_slot", "duration_slots", "charge_slots"];
const HOUR_HEADER: [&str; 4] = ["day", "arrival_hours", "duration_hours", "charge_hours"];

/// Reads sessions from CSV.
///
/// Two headers are accepted: `day,arrival_slot,duration_slots,charge_slots`
/// with integer slots, or `day,arrival_hours,duration_hours,charge_hours`
/// with continuous hours since midnight, which are discretized (arrival
/// floored, duration and charge rounded up to whole slots). Rows that
/// overrun the horizon or need more charge than connection time are
/// clamped; rows that find no free station are dropped. Both are counted.
pub fn load_sessions_csv(path: &Path, mdp: &MdpConfig) -> Result<Loaded> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_sessions_csv(file, path, mdp)
}

pub fn read_sessions_csv<R: Read>(reader: R, path: &Path, mdp: &MdpConfig) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) if e.is_io_error() => return Err(e.into()),
        Err(e) => return Err(parse_err(1, e.to_string())),
    };
    if headers.is_empty() {
        return Ok(Loaded::default());
    }
    let hours = if headers.iter().eq(SLOT_HEADER) {
        false
    } else if headers.iter().eq(HOUR_HEADER) {
        true
    } else {
        return Err(parse_err(
            1,
            format!(
                "header must be {} or {}",
                SLOT_HEADER.join(","),
                HOUR_HEADER.join(",")
            ),
        ));
    };

    let mut rows = Vec::new();
    let mut clamped_rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(parse_err(
                line,
                format!("expected 4 fields, got {}", record.len()),
            ));
        }
        let day: usize = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad day {:?}", &record[0])))?;
        let (arrival, d, c) = if hours {
            let h = |k: usize| -> Result<f64> {
                let v: f64 = record[k].parse().map_err(|_| {
                    parse_err(line, format!("bad {} {:?}", HOUR_HEADER[k], &record[k]))
                })?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(parse_err(
                        line,
                        format!("{} must be nonnegative", HOUR_HEADER[k]),
                    ));
                }
                Ok(v)
            };
            let slots = |v: f64| ((v / mdp.slot_hours).ceil() as usize).max(1);
            (
                (h(1)? / mdp.slot_hours).floor() as usize + 1,
                slots(h(2)?),
                slots(h(3)?),
            )
        } else {
            let n = |k: usize| -> Result<usize> {
                record[k].parse().map_err(|_| {
                    parse_err(line, format!("bad {} {:?}", SLOT_HEADER[k], &record[k]))
                })
            };
            (n(1)?, n(2)?, n(3)?)
        };
        if !(1..=mdp.s_max).contains(&arrival) {
            return Err(parse_err(
                line,
                format!("arrival slot {arrival} outside 1..={}", mdp.s_max),
            ));
        }
        if d == 0 || c == 0 {
            return Err(parse_err(
                line,
                "duration and charge must be at least one slot".into(),
            ));
        }
        let d_ok = d.min(mdp.s_max - arrival + 1);
        let c_ok = c.min(d_ok);
        if (d_ok, c_ok) != (d, c) {
            clamped_rows += 1;
        }
        rows.push((day, arrival, d_ok, c_ok));
    }

    let mut by_day: BTreeMap<usize, Vec<(usize, usize, usize)>> = BTreeMap::new();
    for (day, a, d, c) in rows {
        by_day.entry(day).or_default().push((a, d, c));
    }
    let mut sessions = Vec::new();
    let mut dropped_rows = 0;
    for (day, rows) in by_day {
        let mut stations = Stations::new(mdp.n_max, mdp.s_max);
        let mut day_sessions = Vec::new();
        for (arrival_slot, duration_slots, charge_slots) in rows {
            match stations.claim(arrival_slot, arrival_slot + duration_slots - 1) {
                Some(station_id) => day_sessions.push(EvSession {
                    day,
                    arrival_slot,
                    duration_slots,
                    charge_slots,
                    station_id,
                }),
                None => dropped_rows += 1,
            }
        }
        day_sessions.sort_by_key(|s| (s.arrival_slot, s.station_id));
        sessions.extend(day_sessions);
    }
    Ok(Loaded {
        sessions,
        clamped_rows,
        dropped_rows,
    })
}

/// Writes sessions with the integer-slot header.
pub fn write_sessions_csv<W: Write>(writer: W, sessions: &[EvSession]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(SLOT_HEADER)?;
    for s in sessions {
        w.write_record([
            s.day.to_string(),
            s.arrival_slot.to_string(),
            s.duration_slots.to_string(),
            s.charge_slots.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sessions csv>", e))?;
    Ok(())
}

/// Arrivals of one day bucketed by slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayArrivals {
    pub day: usize,
    slots: Vec<Vec<EvSession>>,
}

impl DayArrivals {
    /// Sessions arriving at slot `t` (1-based); empty outside the horizon.
    pub fn at(&self, t: usize) -> &[EvSession] {
        t.checked_sub(1)
            .and_then(|k| self.slots.get(k))
            .map_or(&[], Vec::as_slice)
    }

    pub fn s_max(&self) -> usize {
        self.slots.len()
    }

    /// Arrivals at slot `t` as cars whose id is the session's position in
    /// [`DayArrivals::sessions`].
    pub fn tracked_at(&self, t: usize) -> Vec<TrackedCar> {
        let Some(k) = t.checked_sub(1).filter(|&k| k < self.slots.len()) else {
            return Vec::new();
        };
        let base: usize = self.slots[..k].iter().map(Vec::len).sum();
        self.slots[k]
            .iter()
            .enumerate()
            .map(|(i, s)| TrackedCar {
                id: base + i,
                car: s.as_car(),
            })
            .collect()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &EvSession> + '_ {
        self.slots.iter().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Vec::is_empty)
    }
}

/// Buckets the sessions of `day` by arrival slot, preserving input order.
pub fn sessions_for_day(sessions: &[EvSession], day: usize, s_max: usize) -> DayArrivals {
    let mut slots = vec![Vec::new(); s_max];
    for s in sessions.iter().filter(|s| s.day == day) {
        if let Some(bucket) = s.arrival_slot.checked_sub(1).and_then(|k| slots.get_mut(k)) {
            bucket.push(*s);
        }
    }
    DayArrivals { day, slots }
}

/// Largest number of simultaneously connected sessions over all days and slots.
pub fn max_concurrency(sessions: &[EvSession], s_max: usize) -> usize {
    let mut load: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for s in sessions {
        for t in s.arrival_slot..=s.last_slot().min(s_max) {
            *load.entry((s.day, t)).or_default() += 1;
        }
    }
    load.values().copied().max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(day: usize, arrival_slot: usize, d: usize, c: usize) -> EvSession {
        EvSession {
            day,
            arrival_slot,
            duration_slots: d,
            charge_slots: c,
            station_id: 0,
        }
    }

    fn load(text: &str, mdp: &MdpConfig) -> Result<Loaded> {
        read_sessions_csv(text.as_bytes(), Path::new("mem.csv"), mdp)
    }

    #[test]
    fn generation_is_deterministic() {
        let mdp = MdpConfig::reference();
        let cfg = GeneratorConfig::default();
        let a = generate_synthetic(&cfg, &mdp, 20).unwrap();
        let b = generate_synthetic(&cfg, &mdp, 20).unwrap();
        assert_eq!(a, b);
        assert!(!a.sessions.is_empty());
    }

    #[test]
    fn zero_mean_yields_no_sessions() {
        let cfg = GeneratorConfig {
            mean_sessions_per_day: 0.0,
            ..Default::default()
        };
        let g = generate_synthetic(&cfg, &MdpConfig::reference(), 5).unwrap();
        assert!(g.sessions.is_empty());
        assert_eq!(g.truncated, 0);
    }

    #[test]
    fn generated_sessions_respect_invariants_and_capacity() {
        let mdp = MdpConfig::reference();
        let cfg = GeneratorConfig {
            mean_sessions_per_day: 40.0,
            ..Default::default()
        };
        let g = generate_synthetic(&cfg, &mdp, 30).unwrap();
        for s in &g.sessions {
            s.check(&mdp).unwrap();
        }
        // Brute-force sweep over every (day, slot, station).
        let mut busy = std::collections::HashSet::new();
        for s in &g.sessions {
            for t in s.arrival_slot..=s.last_slot() {
                assert!(
                    busy.insert((s.day, t, s.station_id)),
                    "station double-booked"
                );
            }
        }
        assert!(max_concurrency(&g.sessions, mdp.s_max) <= 10);
        assert!(g.truncated > 0, "heavy demand should overflow some days");
    }

    #[test]
    fn rejects_bad_weights() {
        let mdp = MdpConfig::reference();
        let cfg = GeneratorConfig {
            arrival_weights: vec![0.0; 12],
            ..Default::default()
        };
        assert!(generate_synthetic(&cfg, &mdp, 1).is_err());
        let cfg = GeneratorConfig {
            arrival_weights: vec![1.0; 3],
            ..Default::default()
        };
        assert!(generate_synthetic(&cfg, &mdp, 1).is_err());
    }

    #[test]
    fn csv_pass_through() {
        let l = load(
            "day,arrival_slot,duration_slots,charge_slots\n1,3,4,2\n",
            &MdpConfig::reference(),
        )
        .unwrap();
        assert_eq!(l.sessions, vec![session(1, 3, 4, 2)]);
        assert_eq!(l.clamped_rows, 0);
    }

    #[test]
    fn csv_clamps_charge_to_duration() {
        let l = load(
            "day,arrival_slot,duration_slots,charge_slots\n1,1,3,5\n",
            &MdpConfig::reference(),
        )
        .unwrap();
        assert_eq!(l.sessions[0].charge_slots, 3);
        assert_eq!(l.clamped_rows, 1);
    }

    #[test]
    fn csv_clamps_duration_to_horizon() {
        let l = load(
            "day,arrival_slot,duration_slots,charge_slots\n1,11,4,1\n",
            &MdpConfig::reference(),
        )
        .unwrap();
        assert_eq!(l.sessions[0].duration_slots, 2);
        assert_eq!(l.clamped_rows, 1);
    }

    #[test]
    fn csv_discretizes_hours() {
        let l = load(
            "day,arrival_hours,duration_hours,charge_hours\n2,7.5,5.0,2.5\n",
            &MdpConfig::reference(),
        )
        .unwrap();
        // 07:30 falls in slot 4 (06:00-08:00); 5 h -> 3 slots; 2.5 h -> 2 slots.
        assert_eq!(l.sessions, vec![session(2, 4, 3, 2)]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = load(
            "day,arrival_slot,duration_slots,charge_slots\n1,1,2,1\n1,x,2,1\n",
            &MdpConfig::reference(),
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(load("a,b,c,d\n1,1,1,1\n", &MdpConfig::reference()).is_err());
    }

    #[test]
    fn empty_csv_is_empty_list() {
        let l = load("", &MdpConfig::reference()).unwrap();
        assert!(l.sessions.is_empty());
        let l = load(
            "day,arrival_slot,duration_slots,charge_slots\n",
            &MdpConfig::reference(),
        )
        .unwrap();
        assert!(l.sessions.is_empty());
    }

    #[test]
    fn csv_drops_rows_beyond_station_capacity() {
        let mdp = MdpConfig::new(3, 2).unwrap();
        let l = load(
            "day,arrival_slot,duration_slots,charge_slots\n1,1,3,1\n1,1,3,1\n1,2,1,1\n1,3,1,1\n",
            &mdp,
        )
        .unwrap();
        assert_eq!(l.sessions.len(), 2);
        assert_eq!(l.dropped_rows, 2);
        assert!(max_concurrency(&l.sessions, 3) <= 2);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_sessions_csv(
            Path::new("/nonexistent/sessions.csv"),
            &MdpConfig::reference(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn csv_write_then_read() {
        let mdp = MdpConfig::reference();
        let g = generate_synthetic(&GeneratorConfig::default(), &mdp, 3).unwrap();
        let mut buf = Vec::new();
        write_sessions_csv(&mut buf, &g.sessions).unwrap();
        let l = read_sessions_csv(buf.as_slice(), Path::new("mem.csv"), &mdp).unwrap();
        // Stations are reassigned on load; only the schema columns survive.
        let key = |v: &[EvSession]| {
            let mut k: Vec<_> = v
                .iter()
                .map(|s| (s.day, s.arrival_slot, s.duration_slots, s.charge_slots))
                .collect();
            k.sort();
            k
        };
        assert_eq!(key(&l.sessions), key(&g.sessions));
        assert_eq!(l.dropped_rows, 0);
    }

    #[test]
    fn toy_day_buckets_by_arrival() {
        let c1 = session(1, 1, 3, 2);
        let c2 = session(1, 1, 2, 1);
        let day = sessions_for_day(&[c1, c2], 1, 3);
        assert_eq!(day.at(1), &[c1, c2]);
        assert!(day.at(2).is_empty() && day.at(3).is_empty());
        assert!(day.at(0).is_empty() && day.at(4).is_empty());
    }

    #[test]
    fn day_query_partitions() {
        let a = session(1, 2, 1, 1);
        let b = session(2, 2, 1, 1);
        let d2 = sessions_for_day(&[a, b], 2, 12);
        assert_eq!(d2.at(2), &[b]);
        assert!(sessions_for_day(&[a, b], 3, 12).is_empty());
    }
}
