//! Scenario files: experiment name, parameter overrides and sweep axes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use qnetsim_core::DeviceConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::experiments;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

macro_rules! registry {
    ($($v:ident => $s:literal),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Experiment { $($v),+ }

        impl Experiment {
            pub const ALL: &'static [Experiment] = &[$(Experiment::$v),+];

            pub fn name(self) -> &'static str {
                match self { $(Experiment::$v => $s),+ }
            }
        }

        impl FromStr for Experiment {
            type Err = anyhow::Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Experiment::$v),)+
                    other => Err(anyhow!(
                        "unknown experiment `{other}`; registered experiments: {}",
                        Experiment::names().join(", ")
                    )),
                }
            }
        }
    };
}

registry! {
    RabiChevron => "rabi-chevron",
    RabiSlice => "rabi-slice",
    Transfer => "transfer",
    TransferTomo => "transfer-tomo",
    GhzPrep => "ghz-prep",
    GhzTransfer => "ghz-transfer",
    BellStHalf => "bell-st-half",
    NetworkGhz => "network-ghz",
    CzTomo => "cz-tomo",
    Rb => "rb",
    Xeb => "xeb",
    FitWirebond => "fit-wirebond",
    FitCoupler => "fit-coupler",
    FitLoadedT1 => "fit-loaded-t1",
}

impl Experiment {
    pub fn names() -> Vec<&'static str> {
        Experiment::ALL.iter().map(|e| e.name()).collect()
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path into the scenario document, e.g. `params.tau_ns`.
    pub parameter: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "schema_one")]
    pub schema_version: u32,
    pub experiment: String,
    /// Device file, relative to the scenario file; bundled default if absent.
    #[serde(default)]
    pub device: Option<PathBuf>,
    /// Experiment parameters layered over the experiment defaults.
    #[serde(default)]
    pub params: serde_json::Map<String, Value>,
    /// Dotted-path overrides applied after `params`.
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default)]
    pub seed: u64,
    /// Shots per tomography setting; experiments pick a default when absent.
    #[serde(default)]
    pub shots: Option<u64>,
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn schema_one() -> u32 {
    SCENARIO_SCHEMA_VERSION
}

/// One grid point, ready to run.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub index: usize,
    pub assignments: Vec<(String, Value)>,
    pub device: DeviceConfig,
    pub params: Value,
    pub seed: u64,
    pub shots: Option<u64>,
}

/// A parsed, fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub experiment: Experiment,
    /// Base document `{device, params}` before sweep assignments.
    pub document: Value,
    pub source_dir: PathBuf,
}

/// Mix a grid index into the scenario seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Replace the value at a dotted path, which must already exist. Optional
/// parameters whose default is `null` count as existing.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(m) => m
                .get_mut(*part)
                .ok_or_else(|| anyhow!("parameter path `{path}` does not exist (no `{part}`)"))?,
            Value::Array(a) => {
                let k: usize = part
                    .parse()
                    .map_err(|_| anyhow!("parameter path `{path}`: `{part}` is not an index"))?;
                let len = a.len();
                a.get_mut(k)
                    .ok_or_else(|| anyhow!("parameter path `{path}`: index {k} out of range ({len})"))?
            }
            _ => bail!("parameter path `{path}` does not exist (`{part}` under a scalar)"),
        };
        if last {
            *cur = value;
            return Ok(());
        }
    }
    unreachable!("split yields at least one part")
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scenario::parse(&text, &dir)
    }

    pub fn parse(text: &str, source_dir: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ScenarioSpec = serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow!("scenario schema violation at `{}`: {}", e.path(), e.inner()))?;
        Scenario::from_spec(spec, source_dir)
    }

    pub fn from_spec(spec: ScenarioSpec, source_dir: &Path) -> Result<Self> {
        if spec.schema_version != SCENARIO_SCHEMA_VERSION {
            bail!("unsupported scenario schema version {}", spec.schema_version);
        }
        let experiment: Experiment = spec.experiment.parse()?;
        let device = match &spec.device {
            Some(p) => {
                let p = if p.is_absolute() { p.clone() } else { source_dir.join(p) };
                DeviceConfig::load(&p)?
            }
            None => DeviceConfig::default(),
        };
        let mut params = experiments::default_params(experiment);
        merge(&mut params, &Value::Object(spec.params.clone()));
        let mut document = serde_json::json!({
            "device": serde_json::to_value(&device)?,
            "params": params,
        });
        for (path, v) in &spec.overrides {
            set_path(&mut document, path, v.clone())?;
        }
        let scenario = Scenario {
            spec,
            experiment,
            document,
            source_dir: source_dir.to_path_buf(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<()> {
        for axis in &self.spec.sweep {
            if axis.values.is_empty() {
                bail!("sweep axis `{}` has no values", axis.parameter);
            }
            let mut probe = self.document.clone();
            set_path(&mut probe, &axis.parameter, axis.values[0].clone())?;
        }
        if self.spec.shots == Some(0) {
            bail!("shots must be positive");
        }
        for p in self.grid()? {
            experiments::check_params(self.experiment, &p.params).with_context(|| format!("grid point {}", p.index))?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, first axis varying slowest.
    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
        for axis in &self.spec.sweep {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    axis.values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((axis.parameter.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .enumerate()
            .map(|(index, assignments)| {
                let mut doc = self.document.clone();
                for (p, v) in &assignments {
                    set_path(&mut doc, p, v.clone())?;
                }
                let device_text = serde_json::to_string(&doc["device"])?;
                let device = DeviceConfig::from_json(&device_text)
                    .with_context(|| format!("device configuration at grid point {index}"))?;
                Ok(GridPoint {
                    index,
                    assignments,
                    device,
                    params: doc["params"].clone(),
                    seed: derive_seed(self.spec.seed, index as u64),
                    shots: self.spec.shots,
                })
            })
            .collect()
    }

    /// Canonical JSON of everything that determines the results.
    pub fn canonical_inputs(&self, seed: u64) -> String {
        let v = serde_json::json!({
            "experiment": self.experiment.name(),
            "document": self.document,
            "sweep": self.spec.sweep,
            "seed": seed,
            "shots": self.spec.shots,
        });
        serde_json::to_string(&v).expect("json values serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_experiment_lists_names() {
        let err = Scenario::parse(r#"{"experiment": "teleport"}"#, Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("teleport"));
        assert!(msg.contains("rabi-chevron") && msg.contains("fit-loaded-t1"));
    }

    #[test]
    fn sweep_paths_must_exist() {
        let bad = r#"{"experiment": "transfer", "sweep": [{"parameter": "params.nope", "values": [1]}]}"#;
        assert!(Scenario::parse(bad, Path::new(".")).is_err());
        let good = r#"{"experiment": "transfer", "sweep": [{"parameter": "params.tau_ns", "values": [70, 72]},
                        {"parameter": "device.qubits.Q2B.t1_s", "values": [1e-5, 2e-5]}]}"#;
        let s = Scenario::parse(good, Path::new(".")).unwrap();
        let g = s.grid().unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[1].assignments[1].1, serde_json::json!(2e-5));
        assert_eq!(g[2].params["tau_ns"], serde_json::json!(72));
        assert_eq!(g[3].device.qubits["Q2B"].t1_s, 2e-5);
    }

    #[test]
    fn params_reject_unknown_fields() {
        let bad = r#"{"experiment": "rb", "params": {"lenghts": [1, 2]}}"#;
        assert!(Scenario::parse(bad, Path::new(".")).is_err());
    }

    #[test]
    fn seeds_differ_per_point() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
