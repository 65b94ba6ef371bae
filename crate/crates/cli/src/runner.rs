//! Grid execution and artifact output.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::experiments::{self, Artifact, PointContext, PointOutput};
use crate::scenario::{GridPoint, Scenario};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub inputs_sha256: String,
    pub seed: u64,
    pub points: usize,
    pub jobs: usize,
    pub wall_time_s: f64,
    pub artifacts: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub summary: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Worker count: explicit value, else all available cores.
pub fn resolve_jobs(jobs: Option<usize>) -> Result<usize> {
    match jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn point_prefix(n_points: usize, index: usize) -> String {
    if n_points == 1 {
        String::new()
    } else {
        format!("point_{index:04}/")
    }
}

fn sweep_csv(scenario: &Scenario, points: &[GridPoint], outputs: &[PointOutput]) -> Result<Vec<u8>> {
    let scalar_keys: Vec<String> = outputs[0]
        .results
        .iter()
        .filter(|(_, v)| v.is_number())
        .map(|(k, _)| k.clone())
        .collect();
    let mut header: Vec<&str> = vec!["index"];
    header.extend(scenario.spec.sweep.iter().map(|a| a.parameter.as_str()));
    header.extend(scalar_keys.iter().map(String::as_str));
    let rows = points
        .iter()
        .zip(outputs)
        .map(|(p, o)| {
            let mut r = vec![p.index.to_string()];
            r.extend(p.assignments.iter().map(|(_, v)| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }));
            r.extend(
                scalar_keys
                    .iter()
                    .map(|k| o.results.get(k).map_or(String::new(), Value::to_string)),
            );
            r
        })
        .collect();
    experiments::csv_bytes(&header, rows)
}

fn summary_json(scenario: &Scenario, seed: u64, points: &[GridPoint], outputs: &[PointOutput]) -> Value {
    let pts: Vec<Value> = points
        .iter()
        .zip(outputs)
        .map(|(p, o)| {
            let params: Map<String, Value> = p.assignments.iter().cloned().collect();
            json!({
                "index": p.index,
                "seed": p.seed,
                "parameters": params,
                "results": o.results,
            })
        })
        .collect();
    json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "experiment": scenario.experiment.name(),
        "seed": seed,
        "points": pts,
    })
}

fn pretty(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Run every grid point and return the artifacts in output order, without
/// writing anything.
pub fn compute(scenario: &Scenario, seed: u64, jobs: usize) -> Result<(Value, Vec<Artifact>)> {
    let mut sc = scenario.clone();
    sc.spec.seed = seed;
    let points = sc.grid()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))?;
    let results: Vec<Result<PointOutput>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let ctx = PointContext {
                    device: &p.device,
                    params: &p.params,
                    seed: p.seed,
                    shots: p.shots,
                    source_dir: &sc.source_dir,
                };
                experiments::run_point(sc.experiment, &ctx)
                    .with_context(|| format!("{} at grid point {}", sc.experiment, p.index))
            })
            .collect()
    });
    let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut artifacts = Vec::new();
    for (p, o) in points.iter().zip(&outputs) {
        let prefix = point_prefix(points.len(), p.index);
        for a in &o.artifacts {
            artifacts.push(Artifact {
                name: format!("{prefix}{}", a.name),
                bytes: a.bytes.clone(),
            });
        }
    }
    if !sc.spec.sweep.is_empty() {
        artifacts.push(Artifact {
            name: SWEEP_FILE.into(),
            bytes: sweep_csv(&sc, &points, &outputs)?,
        });
    }
    let summary = summary_json(&sc, seed, &points, &outputs);
    artifacts.push(Artifact {
        name: SUMMARY_FILE.into(),
        bytes: pretty(&summary)?,
    });
    let mut seen = BTreeSet::new();
    for a in &artifacts {
        if !seen.insert(a.name.as_str()) {
            bail!("experiment produced `{}` twice", a.name);
        }
    }
    Ok((summary, artifacts))
}

pub fn default_out_dir(scenario: &Scenario) -> PathBuf {
    scenario
        .spec
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("qnetsim-out").join(scenario.experiment.name()))
}

fn check_collisions(dir: &Path, artifacts: &[Artifact], force: bool) -> Result<()> {
    if force || !dir.exists() {
        return Ok(());
    }
    let mut clashes: Vec<&str> = artifacts
        .iter()
        .map(|a| a.name.as_str())
        .chain([MANIFEST_FILE])
        .filter(|n| dir.join(n).exists())
        .collect();
    clashes.truncate(5);
    if !clashes.is_empty() {
        bail!(
            "artifact path collision in {}: {} already exist; pass --force to overwrite",
            dir.display(),
            clashes.join(", ")
        );
    }
    Ok(())
}

pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let seed = opts.seed.unwrap_or(scenario.spec.seed);
    let jobs = resolve_jobs(opts.jobs)?;
    let out_dir = opts.out.clone().unwrap_or_else(|| default_out_dir(scenario));
    if !opts.force && out_dir.join(MANIFEST_FILE).exists() {
        bail!(
            "artifact path collision: {} already holds a run; pass --force to overwrite",
            out_dir.display()
        );
    }
    let (summary, artifacts) = compute(scenario, seed, jobs)?;
    check_collisions(&out_dir, &artifacts, opts.force)?;
    let mut entries = Vec::with_capacity(artifacts.len());
    for a in &artifacts {
        let path = out_dir.join(&a.name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, &a.bytes).with_context(|| format!("writing {}", path.display()))?;
        entries.push(ManifestEntry {
            path: a.name.clone(),
            sha256: sha256_hex(&a.bytes),
            bytes: a.bytes.len() as u64,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool: "qnetsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: scenario.experiment.name().into(),
        inputs_sha256: sha256_hex(scenario.canonical_inputs(seed).as_bytes()),
        seed,
        points: summary["points"].as_array().map_or(0, Vec::len),
        jobs,
        wall_time_s: started.elapsed().as_secs_f64(),
        artifacts: entries,
    };
    std::fs::write(out_dir.join(MANIFEST_FILE), pretty(&manifest)?)?;
    Ok(RunReport {
        out_dir,
        manifest,
        summary,
    })
}
