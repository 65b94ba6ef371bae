//! Command-line interface.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use qnetsim_core::DeviceConfig;

use crate::report::emit_report;
use crate::runner::{run_scenario, RunOptions};
use crate::scenario::Scenario;

#[derive(Debug, Parser)]
#[command(
    name = "qnetsim",
    version,
    about = "Pulse-level simulator for a two-node superconducting quantum network"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Output directory; overrides the scenario's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed; overrides the scenario's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads across grid points.
        #[arg(long, env = "QNETSIM_JOBS")]
        jobs: Option<usize>,
        /// Overwrite existing artifacts.
        #[arg(long)]
        force: bool,
    },
    /// Compare a run directory against published values.
    Report { dir: PathBuf },
    /// Check a device or scenario file.
    Validate { config: PathBuf },
}

/// Validate a file, deciding from its content whether it is a scenario.
pub fn validate(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    if value.get("experiment").is_some() {
        let s = Scenario::load(path)?;
        let n = s.grid()?.len();
        Ok(format!(
            "ok: scenario `{}` with {} grid point{}",
            s.experiment,
            n,
            if n == 1 { "" } else { "s" }
        ))
    } else {
        let d = DeviceConfig::from_json(&text).with_context(|| format!("device config {}", path.display()))?;
        Ok(format!(
            "ok: device config with {} qubits and {} cable modes",
            d.qubits.len(),
            d.mode_count
        ))
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            jobs,
            force,
        } => {
            let s = Scenario::load(&scenario)?;
            let r = run_scenario(&s, &RunOptions { out, seed, jobs, force })?;
            println!(
                "{}: {} point{}, {} artifacts in {} ({:.2} s, {} job{})",
                s.experiment,
                r.manifest.points,
                if r.manifest.points == 1 { "" } else { "s" },
                r.manifest.artifacts.len(),
                r.out_dir.display(),
                r.manifest.wall_time_s,
                r.manifest.jobs,
                if r.manifest.jobs == 1 { "" } else { "s" },
            );
        }
        Command::Report { dir } => print!("{}", emit_report(&dir)?.text),
        Command::Validate { config } => println!("{}", validate(&config)?),
    }
    Ok(())
}
