//! Config-driven batch pipeline: session data, experience sets, training,
//! evaluation and benchmarking, each writing artifacts plus a manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::{training_period, DayRange};
use crate::error::{Error, Result};
use crate::eval::{
    csv_writer, evaluate as evaluate_policies, run_benchmark, BenchReport, BenchSpec,
    EvaluationReport, PolicyKind,
};
use crate::experience::{build_experience_set, write_experience_csv, ExperienceSet};
use crate::fqi::{fit_fqi, Encoder, GreedyPolicy, IterationStats};
use crate::mdp::{CostMode, MdpConfig};
use crate::nn::{NetSpec, QNetwork};
use crate::policy::Policy;
use crate::seeds;
use crate::sessions::{
    generate_synthetic, load_sessions_csv, sessions_for_day, write_sessions_csv, DayArrivals,
    EvSession, GeneratorConfig,
};

const STAGE_EXPERIENCE: u64 = 1;
const STAGE_NETWORK: u64 = 2;

/// Sweep axes and data windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub modes: Vec<CostMode>,
    pub n_traj: Vec<usize>,
    pub months: Vec<usize>,
    /// Length of the synthetic year.
    pub days: usize,
    pub test_window: DayRange,
    /// Training periods drawn per benchmark cell.
    pub bench_repetitions: usize,
    /// Session log to use instead of synthetic data.
    pub sessions_csv: Option<PathBuf>,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            modes: vec![CostMode::Updated, CostMode::Old],
            n_traj: vec![1000],
            months: vec![1],
            days: 365,
            test_window: crate::calendar::test_window(),
            bench_repetitions: 3,
            sessions_csv: None,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    1
}

/// Full run description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "MdpConfig::reference")]
    pub mdp: MdpConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub network: NetSpec,
    #[serde(default)]
    pub experiment: Experiment,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            out_dir: default_out_dir(),
            mdp: MdpConfig::reference(),
            generator: GeneratorConfig::default(),
            network: NetSpec::default(),
            experiment: Experiment::default(),
        }
    }
}

/// Command-line replacements for config values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<CostMode>,
    pub n_traj: Option<usize>,
    pub months: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = o.mode {
            self.experiment.modes = vec![m];
        }
        if let Some(n) = o.n_traj {
            self.experiment.n_traj = vec![n];
        }
        if let Some(m) = o.months {
            self.experiment.months = vec![m];
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.mdp.validate()?;
        self.generator.validate(&self.mdp)?;
        self.network.validate()?;
        let x = &self.experiment;
        if x.modes.is_empty() {
            return Err(Error::config("experiment.modes", "must be nonempty"));
        }
        if x.n_traj.is_empty() || x.n_traj.contains(&0) {
            return Err(Error::config(
                "experiment.n_traj",
                "must be nonempty with entries >= 1",
            ));
        }
        if x.months.is_empty() {
            return Err(Error::config("experiment.months", "must be nonempty"));
        }
        if x.bench_repetitions == 0 {
            return Err(Error::config(
                "experiment.bench_repetitions",
                "must be at least 1",
            ));
        }
        let w = x.test_window;
        if w.is_empty() || w.start == 0 || w.end > x.days {
            return Err(Error::config(
                "experiment.test_window",
                format!("must be a nonempty range within days 1..={}", x.days),
            ));
        }
        for (months, index, period) in self.training_periods()? {
            if period.end > x.days {
                return Err(Error::config(
                    "experiment.days",
                    format!(
                        "{months}-month training period {index} ends after day {}",
                        x.days
                    ),
                ));
            }
            if period.overlaps(&w) {
                return Err(Error::Leakage {
                    period: index,
                    start: period.start,
                    end: period.end,
                });
            }
        }
        Ok(())
    }

    /// Every (months, index, days) training period the config can touch.
    pub fn training_periods(&self) -> Result<Vec<(usize, usize, DayRange)>> {
        let mut out = Vec::new();
        for &m in &self.experiment.months {
            for i in 0..self.experiment.bench_repetitions {
                out.push((m, i, training_period(m, i, self.seed)?));
            }
        }
        Ok(out)
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn experience_seed(&self) -> u64 {
        seeds::derive(self.seed, &[STAGE_EXPERIENCE])
    }

    /// Network settings with the initialization seed tied to the run seed.
    pub fn network_spec(&self) -> NetSpec {
        NetSpec {
            seed: seeds::derive(self.seed, &[STAGE_NETWORK, self.network.seed]),
            ..self.network.clone()
        }
    }

    fn first_cell(&self) -> (usize, usize) {
        (self.experiment.n_traj[0], self.experiment.months[0])
    }
}

/// Record written next to a stage's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<String>,
}

/// Files written by one stage, manifest last.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub paths: Vec<PathBuf>,
}

/// The session log of a run: the configured CSV or the synthetic year.
pub fn sessions(cfg: &RunConfig) -> Result<Vec<EvSession>> {
    match &cfg.experiment.sessions_csv {
        Some(p) => Ok(load_sessions_csv(p, &cfg.mdp)?.sessions),
        None => Ok(generate_synthetic(&cfg.generator, &cfg.mdp, cfg.experiment.days)?.sessions),
    }
}

fn day_range(sessions: &[EvSession], range: DayRange, s_max: usize) -> Vec<DayArrivals> {
    range
        .days()
        .map(|d| sessions_for_day(sessions, d, s_max))
        .collect()
}

fn stem(mode: CostMode, n_traj: usize, months: usize, seed: u64) -> String {
    format!("{mode}-n{n_traj}-m{months}-s{seed}")
}

struct Out<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
    files: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
}

impl<'a> Out<'a> {
    fn new(cfg: &'a RunConfig, command: &'static str) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        let mut seeds = BTreeMap::new();
        seeds.insert("run".to_string(), cfg.seed);
        seeds.insert("generator".to_string(), cfg.generator.seed);
        Ok(Out {
            cfg,
            command,
            files: Vec::new(),
            seeds,
        })
    }

    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        let path = self.cfg.out_dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n").map_err(|e| Error::io(name, e))
        })
    }

    fn finish(mut self) -> Result<Artifacts> {
        let manifest = Manifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: self.cfg.hash(),
            config: self.cfg.clone(),
            seeds: std::mem::take(&mut self.seeds),
            artifacts: self
                .files
                .iter()
                .map(|p| {
                    p.file_name()
                        .expect("artifact has a name")
                        .to_string_lossy()
                        .into_owned()
                })
                .collect(),
        };
        let name = format!("{}.manifest.json", self.command);
        self.write_json(&name, &manifest)?;
        Ok(Artifacts { paths: self.files })
    }
}

/// Writes `sessions.csv`.
pub fn gen_sessions(cfg: &RunConfig) -> Result<Artifacts> {
    let sessions = sessions(cfg)?;
    let mut out = Out::new(cfg, "gen-sessions")?;
    out.write("sessions.csv", |w| write_sessions_csv(w, &sessions))?;
    out.finish()
}

fn experience_set(
    cfg: &RunConfig,
    sessions: &[EvSession],
    mode: CostMode,
    n_traj: usize,
    months: usize,
) -> Result<ExperienceSet> {
    let period = training_period(months, 0, cfg.seed)?;
    build_experience_set(
        &day_range(sessions, period, cfg.mdp.s_max),
        n_traj,
        mode,
        &cfg.mdp,
        cfg.experience_seed(),
    )
}

/// Writes one experience CSV per (mode, N_traj, months) cell.
pub fn gen_experience(cfg: &RunConfig) -> Result<Artifacts> {
    let sessions = sessions(cfg)?;
    let mut out = Out::new(cfg, "gen-experience")?;
    out.seeds
        .insert("experience".to_string(), cfg.experience_seed());
    for &mode in &cfg.experiment.modes {
        for &n in &cfg.experiment.n_traj {
            for &m in &cfg.experiment.months {
                let set = experience_set(cfg, &sessions, mode, n, m)?;
                out.write(
                    &format!("experience-{}.csv", stem(mode, n, m, cfg.seed)),
                    |w| write_experience_csv(w, &set),
                )?;
            }
        }
    }
    out.finish()
}

fn write_training_log(w: &mut impl Write, iterations: &[IterationStats]) -> Result<()> {
    let mut csv = csv_writer(w);
    csv.write_record(["iteration", "loss", "target_secs", "fit_secs"])?;
    for it in iterations {
        csv.write_record([
            it.iteration.to_string(),
            it.loss.to_string(),
            format!("{:.6}", it.target_secs),
            format!("{:.6}", it.fit_secs),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<training log>", e))
}

fn train_one(
    cfg: &RunConfig,
    sessions: &[EvSession],
    mode: CostMode,
    n: usize,
    m: usize,
    out: &mut Out,
) -> Result<QNetwork<f64>> {
    let set = experience_set(cfg, sessions, mode, n, m)?;
    let fit = fit_fqi::<f64>(&set, &cfg.mdp, &cfg.network_spec())?;
    let stem = stem(mode, n, m, cfg.seed);
    out.write(&format!("qnet-{stem}.bin"), |w| {
        fit.network.write_checkpoint(w)
    })?;
    out.write(&format!("train-{stem}.csv"), |w| {
        write_training_log(w, &fit.iterations)
    })?;
    Ok(fit.network)
}

fn record_training_seeds(cfg: &RunConfig, out: &mut Out) {
    out.seeds
        .insert("experience".to_string(), cfg.experience_seed());
    out.seeds
        .insert("network".to_string(), cfg.network_spec().seed);
}

/// Trains every (mode, N_traj, months) cell; writes a checkpoint and a
/// per-iteration log for each.
pub fn train(cfg: &RunConfig) -> Result<Artifacts> {
    let sessions = sessions(cfg)?;
    let mut out = Out::new(cfg, "train")?;
    record_training_seeds(cfg, &mut out);
    for &mode in &cfg.experiment.modes {
        for &n in &cfg.experiment.n_traj {
            for &m in &cfg.experiment.months {
                train_one(cfg, &sessions, mode, n, m, &mut out)?;
            }
        }
    }
    out.finish()
}

/// Evaluates the configured modes' greedy policies, trained on the first
/// N_traj and months entries, against the baselines on the test window.
/// Reuses checkpoints from a prior `train` in the output directory.
pub fn evaluate(cfg: &RunConfig) -> Result<(EvaluationReport, Artifacts)> {
    let sessions = sessions(cfg)?;
    let mut out = Out::new(cfg, "evaluate")?;
    record_training_seeds(cfg, &mut out);
    let (n, m) = cfg.first_cell();
    let mut policies = Vec::new();
    for &mode in &cfg.experiment.modes {
        let ckpt = cfg
            .out_dir
            .join(format!("qnet-{}.bin", stem(mode, n, m, cfg.seed)));
        let q = if ckpt.exists() {
            let file = File::open(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
            let q = QNetwork::<f64>::read_checkpoint(BufReader::new(file), &cfg.network_spec())?;
            let want = Encoder::new(&cfg.mdp).dim();
            if q.input_dim() != want {
                return Err(Error::FeatureShape {
                    expected: want,
                    got: q.input_dim(),
                });
            }
            q
        } else {
            train_one(cfg, &sessions, mode, n, m, &mut out)?
        };
        policies.push((
            PolicyKind::rl(mode),
            GreedyPolicy {
                q,
                mode,
                cfg: cfg.mdp,
            },
        ));
    }
    let rl: Vec<(PolicyKind, &(dyn Policy + Sync))> = policies
        .iter()
        .map(|(k, p)| (*k, p as &(dyn Policy + Sync)))
        .collect();

    let period = training_period(m, 0, cfg.seed)?;
    let mut provenance = BTreeMap::new();
    provenance.insert("config_sha256".to_string(), cfg.hash());
    provenance.insert("seed".to_string(), cfg.seed.to_string());
    provenance.insert("n_traj".to_string(), n.to_string());
    provenance.insert("months".to_string(), m.to_string());
    provenance.insert(
        "training_period".to_string(),
        format!("{}..={}", period.start, period.end),
    );
    let w = cfg.experiment.test_window;
    provenance.insert(
        "test_window".to_string(),
        format!("{}..={}", w.start, w.end),
    );

    let test = day_range(&sessions, w, cfg.mdp.s_max);
    let report = evaluate_policies(&test, &rl, &cfg.mdp, provenance)?;
    emit_report(&report, &mut out)?;
    Ok((report, out.finish()?))
}

fn emit_report(report: &EvaluationReport, out: &mut Out) -> Result<()> {
    out.write("costs.csv", |w| report.write_costs_csv(w))?;
    out.write("normalized.csv", |w| report.write_normalized_csv(w))?;
    out.write("flex.csv", |w| report.write_flex_csv(w))?;
    out.write_json("report.json", report)
}

/// Times both cost modes over the N_traj x months grid.
pub fn bench(cfg: &RunConfig) -> Result<(BenchReport, Artifacts)> {
    let sessions = sessions(cfg)?;
    let mut out = Out::new(cfg, "bench")?;
    record_training_seeds(cfg, &mut out);
    let spec = BenchSpec {
        arms: [CostMode::Old, CostMode::Updated],
        n_traj: cfg.experiment.n_traj.clone(),
        months: cfg.experiment.months.clone(),
        repetitions: cfg.experiment.bench_repetitions,
        seed: cfg.seed,
    };
    let report = run_benchmark::<f64>(&sessions, &spec, &cfg.mdp, &cfg.network_spec())?;
    out.write("bench.csv", |w| report.write_csv(w))?;
    out.write("bench_summary.csv", |w| report.write_summary_csv(w))?;
    out.write_json("bench.json", &report)?;
    Ok((report, out.finish()?))
}
