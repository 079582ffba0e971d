use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use evflex::mdp::CostMode;
use evflex::pipeline::{self, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "evflex",
    version,
    about = "Batch pipeline for coordinated EV charging with fitted Q-iteration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the session log used by every other stage.
    GenSessions(Common),
    /// Sample experience sets for each configured mode.
    GenExperience(Common),
    /// Train Q-networks and write checkpoints.
    Train(Common),
    /// Compare trained policies with the baselines on the test window.
    Evaluate(Common),
    /// Time training for both cost modes over the grid.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<CostMode>,
    #[arg(long)]
    ntraj: Option<usize>,
    #[arg(long)]
    months: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<CostMode, String> {
    s.parse()
        .map_err(|_| format!("expected `old` or `updated`, got `{s}`"))
}

impl Common {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            mode: self.mode,
            n_traj: self.ntraj,
            months: self.months,
            out_dir: self.out.clone(),
        })?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let artifacts = match cli.command {
        Command::GenSessions(c) => pipeline::gen_sessions(&c.config()?)?,
        Command::GenExperience(c) => pipeline::gen_experience(&c.config()?)?,
        Command::Train(c) => pipeline::train(&c.config()?)?,
        Command::Evaluate(c) => {
            let (report, artifacts) = pipeline::evaluate(&c.config()?)?;
            for (policy, cost) in &report.normalized {
                eprintln!("{policy:<10} normalized cost {cost:.4}");
            }
            artifacts
        }
        Command::Bench(c) => {
            let (report, artifacts) = pipeline::bench(&c.config()?)?;
            for s in &report.summary {
                eprintln!(
                    "n_traj {:>6} months {} reduction {:.1}%",
                    s.n_traj,
                    s.months,
                    100.0 * s.reduction
                );
            }
            artifacts
        }
    };
    for p in &artifacts.paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
