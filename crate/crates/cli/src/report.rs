//! Human-readable comparison of a run against published values.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

use crate::runner::{sha256_hex, Manifest, MANIFEST_FILE, SUMMARY_FILE};

/// A published value and the band a simulation must land in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub experiment: &'static str,
    pub key: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub citation: &'static str,
}

const fn band(
    experiment: &'static str,
    key: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
    citation: &'static str,
) -> Reference {
    Reference {
        experiment,
        key,
        value,
        lo,
        hi,
        citation,
    }
}

pub const REFERENCES: &[Reference] = &[
    band(
        "rabi-chevron",
        "fsr_estimate_mhz",
        105.0,
        103.0,
        107.0,
        "cable free spectral range, 105 MHz",
    ),
    band(
        "rabi-slice",
        "first_swap_ns",
        45.45,
        44.5,
        46.5,
        "vacuum Rabi swap time at g/2pi = 5.5 MHz",
    ),
    band(
        "transfer",
        "receiver_population",
        0.881,
        0.86,
        0.90,
        "measured receiver excitation, 0.881 +- 0.008",
    ),
    band(
        "transfer",
        "process_fidelity",
        0.920,
        0.905,
        0.935,
        "numerical transfer process fidelity, 0.920",
    ),
    band(
        "transfer-tomo",
        "process_fidelity",
        0.920,
        0.905,
        0.935,
        "numerical transfer process fidelity, 0.920",
    ),
    band(
        "bell-st-half",
        "bell_fidelity",
        0.915,
        0.895,
        0.935,
        "numerical half-transfer Bell fidelity, 0.915",
    ),
    band(
        "ghz-prep",
        "ghz_fidelity",
        0.938,
        0.91,
        0.96,
        "numerical node GHZ fidelity, 0.938 (measured CZ process)",
    ),
    band(
        "ghz-transfer",
        "prep_fidelity",
        0.938,
        0.91,
        0.96,
        "numerical node GHZ fidelity, 0.938 (measured CZ process)",
    ),
    band(
        "ghz-transfer",
        "transfer_fidelity",
        0.648,
        0.608,
        0.688,
        "numerical transferred GHZ fidelity, 0.648",
    ),
    band(
        "network-ghz",
        "bell_fidelity",
        0.915,
        0.895,
        0.935,
        "numerical half-transfer Bell fidelity, 0.915",
    ),
    band(
        "network-ghz",
        "ghz4_fidelity",
        0.829,
        0.789,
        0.869,
        "numerical four-qubit GHZ fidelity, 0.829",
    ),
    band(
        "network-ghz",
        "ghz6_fidelity",
        0.738,
        0.698,
        0.778,
        "numerical six-qubit GHZ fidelity, 0.738",
    ),
    band(
        "cz-tomo",
        "process_fidelity",
        0.950,
        0.93,
        0.98,
        "measured average CZ fidelity, 0.950 +- 0.006",
    ),
    band(
        "cz-tomo",
        "cz_duration_ns",
        21.2,
        21.15,
        21.25,
        "CZ duration at g/2pi = 16.7 MHz, 21.2 ns",
    ),
    band(
        "cz-tomo",
        "iswap_duration_ns",
        15.0,
        14.95,
        15.05,
        "iSWAP duration at g/2pi = 16.7 MHz, 15.0 ns",
    ),
    band(
        "cz-tomo",
        "lossless_phase_error_rad",
        0.0,
        0.0,
        1e-3,
        "CZ phase pattern (1, 1, 1, -1)",
    ),
    band(
        "rb",
        "average_gate_fidelity",
        0.9974,
        0.9969,
        0.9979,
        "single-qubit average gate fidelity, 0.9974",
    ),
    band("xeb", "cycle_error", 0.041, 0.036, 0.046, "XEB error per cycle, 4.1%"),
    band(
        "fit-wirebond",
        "r_s_ohm",
        0.38,
        0.37962,
        0.38038,
        "wirebond interface resistance, 0.38 ohm",
    ),
    band(
        "fit-wirebond",
        "q0",
        90.9e3,
        90.8091e3,
        90.9909e3,
        "intrinsic cable quality factor, 90.9e3",
    ),
    band(
        "fit-coupler",
        "l_t_nh",
        0.620,
        0.619,
        0.621,
        "coupler junction inductance, 0.620 nH",
    ),
    band(
        "fit-coupler",
        "g_max_mhz",
        29.0,
        28.0,
        30.0,
        "maximum qubit-mode coupling, 29 MHz",
    ),
    band(
        "fit-loaded-t1",
        "loaded_t1_us",
        1.4,
        0.98,
        1.82,
        "loaded qubit lifetime during transfer, 1.4 us",
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub point: usize,
    pub key: String,
    pub computed: f64,
    pub reference: Reference,
}

impl ReportRow {
    pub fn pass(&self) -> bool {
        self.computed >= self.reference.lo && self.computed <= self.reference.hi
    }

    pub fn delta(&self) -> f64 {
        self.computed - self.reference.value
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub experiment: String,
    pub rows: Vec<ReportRow>,
    pub modified: Vec<String>,
    pub text: String,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(ReportRow::pass)
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn emit_report(dir: &Path) -> Result<Report> {
    if !dir.is_dir() {
        bail!("missing artifacts: {} is not a directory", dir.display());
    }
    let summary_path = dir.join(SUMMARY_FILE);
    if !summary_path.exists() {
        bail!("missing artifact: {} not found in {}", SUMMARY_FILE, dir.display());
    }
    let summary = read_json(&summary_path)?;
    let mut modified = Vec::new();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        bail!("missing artifact: {} not found in {}", MANIFEST_FILE, dir.display());
    }
    let manifest: Manifest = serde_json::from_value(read_json(&manifest_path)?)?;
    for e in &manifest.artifacts {
        let p = dir.join(&e.path);
        let bytes = std::fs::read(&p).map_err(|_| anyhow!("missing artifact: {} listed in manifest", e.path))?;
        if sha256_hex(&bytes) != e.sha256 {
            modified.push(e.path.clone());
        }
    }
    let experiment = summary["experiment"]
        .as_str()
        .ok_or_else(|| anyhow!("{SUMMARY_FILE}: no experiment name"))?
        .to_string();
    let points = summary["points"]
        .as_array()
        .ok_or_else(|| anyhow!("{SUMMARY_FILE}: no points"))?;
    let refs: Vec<&Reference> = REFERENCES.iter().filter(|r| r.experiment == experiment).collect();

    let mut rows = Vec::new();
    let mut text = String::new();
    writeln!(
        text,
        "run: {} ({} point{}, seed {})",
        experiment,
        points.len(),
        if points.len() == 1 { "" } else { "s" },
        manifest.seed
    )?;
    writeln!(text, "directory: {}", dir.display())?;
    writeln!(text)?;
    writeln!(
        text,
        "{:>5}  {:<26} {:>12} {:>12}  {:<23} {:<6} {:>11}  source",
        "point", "quantity", "computed", "reference", "band", "status", "delta"
    )?;
    for p in points {
        let index = p["index"].as_u64().unwrap_or(0) as usize;
        let results = &p["results"];
        for r in &refs {
            let Some(v) = results[r.key].as_f64() else { continue };
            let row = ReportRow {
                point: index,
                key: r.key.to_string(),
                computed: v,
                reference: **r,
            };
            writeln!(
                text,
                "{:>5}  {:<26} {:>12.6} {:>12.6}  [{:>9.6}, {:>9.6}] {:<6} {:>+11.6}  {}",
                index,
                r.key,
                v,
                r.value,
                r.lo,
                r.hi,
                if row.pass() { "PASS" } else { "FAIL" },
                row.delta(),
                r.citation
            )?;
            rows.push(row);
        }
    }
    if rows.is_empty() {
        writeln!(text, "(no published reference values for this experiment)")?;
    }
    writeln!(text)?;
    let failed = rows.iter().filter(|r| !r.pass()).count();
    writeln!(
        text,
        "{} compared, {} pass, {} fail",
        rows.len(),
        rows.len() - failed,
        failed
    )?;
    for m in &modified {
        writeln!(text, "warning: {m} differs from its manifest hash")?;
    }
    Ok(Report {
        experiment,
        rows,
        modified,
        text,
    })
}
