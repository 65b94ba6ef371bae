//! Device description shared by every experiment.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{self, ChannelConfig, CouplerConfig, CouplingContext, QubitConfig, WirebondLossModel};

pub const DEVICE_SCHEMA_VERSION: u32 = 1;

const DEFAULT_DEVICE_JSON: &str = include_str!("../data/default_device.json");

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown qubit `{0}`")]
    UnknownQubit(String),
    #[error(transparent)]
    Circuit(#[from] circuit::CircuitError),
}

pub type Result<T> = std::result::Result<T, DeviceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    A,
    B,
}

impl Node {
    pub const BOTH: [Node; 2] = [Node::A, Node::B];

    pub fn as_str(self) -> &'static str {
        match self {
            Node::A => "A",
            Node::B => "B",
        }
    }

    /// Label of qubit `j` (1..=3) on this node, e.g. `Q2A`.
    pub fn qubit(self, j: u8) -> String {
        format!("Q{j}{}", self.as_str())
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn mode_label(m: usize) -> String {
    format!("m{m}")
}

/// How a cable-coupled qubit's `T1` is modified while its coupler is on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadedT1Policy {
    /// Loaded `T1` evaluated once at `reference_coupling_hz`.
    Reference,
    /// Loaded `T1` evaluated at each frame's coupling.
    PerFrame,
    /// The same fixed value whenever the coupler is on.
    Fixed { t1_s: f64 },
    /// No coupler-induced loss.
    Intrinsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadedT1Config {
    pub policy: LoadedT1Policy,
    pub reference_coupling_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CzProxyConfig {
    /// Process fidelity of every CZ unless overridden.
    pub fidelity: f64,
    /// Overrides keyed by control–target pair, e.g. `Q2A-Q1A`.
    #[serde(default)]
    pub per_pair: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub schema_version: u32,
    pub qubits: BTreeMap<String, QubitConfig>,
    pub couplers: BTreeMap<Node, CouplerConfig>,
    pub channel: ChannelConfig,
    pub wirebond: WirebondLossModel,
    pub fsr_hz: f64,
    /// Capacitive coupling between each edge qubit and the node's Q2.
    pub exchange_coupling_hz: f64,
    pub mode_count: usize,
    /// 1-based index of the relay mode.
    pub communication_mode: usize,
    pub communication_freq_hz: f64,
    /// Frequency shift applied to spectator qubits during gates.
    pub spectator_shift_hz: f64,
    pub cz_proxy: CzProxyConfig,
    pub loaded_t1: LoadedT1Config,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig::from_json(DEFAULT_DEVICE_JSON).expect("bundled device config is valid")
    }
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> DeviceError {
    DeviceError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

impl DeviceConfig {
    pub fn default_json() -> &'static str {
        DEFAULT_DEVICE_JSON
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: DeviceConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            DeviceError::Schema {
                path: if path.is_empty() { ".".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DeviceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("device config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != DEVICE_SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!(
                    "unsupported version {}, expected {DEVICE_SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        for node in Node::BOTH {
            for j in 1..=3 {
                let label = node.qubit(j);
                let q = self
                    .qubits
                    .get(&label)
                    .ok_or_else(|| invalid(format!("qubits.{label}"), "missing qubit"))?;
                validate_qubit(&label, q, j == 2)?;
            }
            let c = self
                .couplers
                .get(&node)
                .ok_or_else(|| invalid(format!("couplers.{node}"), "missing coupler"))?;
            c.validate()
                .map_err(|e| invalid(format!("couplers.{node}"), e.to_string()))?;
        }
        if let Some(extra) = self
            .qubits
            .keys()
            .find(|k| !Node::BOTH.iter().any(|n| (1..=3).any(|j| n.qubit(j) == **k)))
        {
            return Err(invalid(format!("qubits.{extra}"), "unknown qubit label"));
        }
        self.channel.validate().map_err(|e| invalid("channel", e.to_string()))?;
        if self.mode_count.is_multiple_of(2) || self.mode_count == 0 {
            return Err(invalid("mode_count", format!("must be odd, got {}", self.mode_count)));
        }
        if !(1..=self.mode_count).contains(&self.communication_mode) {
            return Err(invalid(
                "communication_mode",
                format!("must lie in [1, {}]", self.mode_count),
            ));
        }
        if self.channel.mode_lifetimes_s.len() != self.mode_count {
            return Err(invalid(
                "channel.mode_lifetimes_s",
                format!(
                    "expected {} lifetimes, got {}",
                    self.mode_count,
                    self.channel.mode_lifetimes_s.len()
                ),
            ));
        }
        for (name, v) in [
            ("fsr_hz", self.fsr_hz),
            ("exchange_coupling_hz", self.exchange_coupling_hz),
            ("communication_freq_hz", self.communication_freq_hz),
            ("loaded_t1.reference_coupling_hz", self.loaded_t1.reference_coupling_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !self.spectator_shift_hz.is_finite() {
            return Err(invalid("spectator_shift_hz", "must be finite"));
        }
        if self.wirebond.r_s_ohm < 0.0 || !(self.wirebond.q0 > 0.0) {
            return Err(invalid("wirebond", "need r_s_ohm >= 0 and q0 > 0"));
        }
        let check_f = |path: String, f: f64| {
            if (0.0..=1.0).contains(&f) {
                Ok(())
            } else {
                Err(invalid(path, format!("fidelity must lie in [0, 1], got {f}")))
            }
        };
        check_f("cz_proxy.fidelity".into(), self.cz_proxy.fidelity)?;
        for (k, f) in &self.cz_proxy.per_pair {
            check_f(format!("cz_proxy.per_pair.{k}"), *f)?;
        }
        if let LoadedT1Policy::Fixed { t1_s } = self.loaded_t1.policy {
            if !(t1_s > 0.0) {
                return Err(invalid("loaded_t1.policy.t1_s", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn qubit(&self, label: &str) -> Result<&QubitConfig> {
        self.qubits
            .get(label)
            .ok_or_else(|| DeviceError::UnknownQubit(label.to_string()))
    }

    pub fn coupler(&self, node: Node) -> &CouplerConfig {
        &self.couplers[&node]
    }

    pub fn omega_comm(&self) -> f64 {
        2.0 * PI * self.communication_freq_hz
    }

    pub fn exchange_coupling(&self) -> f64 {
        2.0 * PI * self.exchange_coupling_hz
    }

    /// Idle frequency of a qubit measured from the relay mode, in rad/s.
    pub fn idle_detuning(&self, label: &str) -> Result<f64> {
        Ok(2.0 * PI * (self.qubit(label)?.f_idle_hz - self.communication_freq_hz))
    }

    pub fn anharmonicity(&self, label: &str) -> Result<f64> {
        Ok(2.0 * PI * self.qubit(label)?.anharmonicity_hz)
    }

    /// Lifetime of 1-based mode `m`.
    pub fn mode_lifetime(&self, m: usize) -> Option<f64> {
        self.channel.mode_lifetimes_s.get(m.checked_sub(1)?).copied()
    }

    /// Detuning of 1-based mode `m` from the frame centre, in rad/s.
    pub fn mode_detuning(&self, m: usize) -> f64 {
        (m as f64 - (self.mode_count as f64 + 1.0) / 2.0) * 2.0 * PI * self.fsr_hz
    }

    pub fn mode_inductance(&self) -> f64 {
        circuit::mode_inductance(&self.channel)
    }

    pub fn coupling_context(&self, node: Node) -> Result<CouplingContext> {
        let q = self.qubit(&node.qubit(2))?;
        let l_q = q.l_q_h.ok_or(circuit::CircuitError::MissingLq)?;
        Ok(CouplingContext {
            coupler: *self.coupler(node),
            l_q,
            l_m: self.mode_inductance(),
            omega_m: self.omega_comm(),
            omega_q: self.omega_comm(),
        })
    }

    /// `T1` of the node's cable qubit while interacting at the relay mode
    /// with coupling `g` (rad/s).
    pub fn loaded_t1_at(&self, node: Node, g: f64) -> Result<f64> {
        let ctx = self.coupling_context(node)?;
        let delta = circuit::coupler_phase_for_coupling(g, &ctx)?;
        Ok(circuit::qubit_loaded_t1(
            delta,
            self.omega_comm(),
            self.qubit(&node.qubit(2))?,
            self.coupler(node),
            &self.channel,
        )?)
    }

    /// `T1` of the node's cable qubit in a frame where its coupler carries `g`,
    /// following the configured policy. Returns `None` for intrinsic.
    pub fn coupler_on_t1(&self, node: Node, g: f64) -> Result<Option<f64>> {
        if g == 0.0 {
            return Ok(None);
        }
        match self.loaded_t1.policy {
            LoadedT1Policy::Intrinsic => Ok(None),
            LoadedT1Policy::Fixed { t1_s } => Ok(Some(t1_s)),
            LoadedT1Policy::Reference => Ok(Some(
                self.loaded_t1_at(node, 2.0 * PI * self.loaded_t1.reference_coupling_hz)?,
            )),
            LoadedT1Policy::PerFrame => Ok(Some(self.loaded_t1_at(node, g)?)),
        }
    }

    /// Process fidelity of the CZ proxy between `control` and `target`.
    pub fn cz_fidelity(&self, control: &str, target: &str) -> f64 {
        self.cz_proxy
            .per_pair
            .get(&format!("{control}-{target}"))
            .copied()
            .unwrap_or(self.cz_proxy.fidelity)
    }
}

fn validate_qubit(label: &str, q: &QubitConfig, cable: bool) -> Result<()> {
    let p = |f: &str| format!("qubits.{label}.{f}");
    if !(q.f_idle_hz > 0.0 && q.f_idle_hz <= q.f_max_hz) {
        return Err(invalid(p("f_idle_hz"), "need 0 < f_idle_hz <= f_max_hz"));
    }
    if !(q.anharmonicity_hz < 0.0) {
        return Err(invalid(p("anharmonicity_hz"), "must be negative"));
    }
    if !(q.t1_s > 0.0) {
        return Err(invalid(p("t1_s"), "must be positive"));
    }
    if !(q.t_phi_s > 0.0) {
        return Err(invalid(p("t_phi_s"), "must be positive"));
    }
    for (name, f) in [("readout_fg", q.readout_fg), ("readout_fe", q.readout_fe)] {
        if !(f > 0.5 && f <= 1.0) {
            return Err(invalid(
                p(name),
                format!("{f} outside (0.5, 1]; the confusion matrix would not be invertible"),
            ));
        }
    }
    match q.l_q_h {
        Some(l) if !(l > 0.0) => return Err(invalid(p("l_q_h"), "must be positive")),
        None if cable => return Err(invalid(p("l_q_h"), "required for cable-coupled qubits")),
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_default_values() {
        let d = DeviceConfig::default();
        let q = d.qubit("Q1A").unwrap();
        assert_eq!(q.t1_s, 12e-6);
        assert_eq!(q.t_phi_s, 3.4e-6);
        assert_eq!(d.coupler(Node::A).l_t_h, 0.620e-9);
        assert_eq!(d.mode_count, 5);
        assert_eq!(d.communication_mode, 3);
    }

    #[test]
    fn round_trip_is_idempotent() {
        let d = DeviceConfig::default();
        let a = d.to_json_pretty();
        let b = DeviceConfig::from_json(&a).unwrap().to_json_pretty();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_readout_fidelity() {
        let mut v: serde_json::Value = serde_json::from_str(DeviceConfig::default_json()).unwrap();
        v["qubits"]["Q1A"]["readout_fg"] = serde_json::json!(0.4);
        let err = DeviceConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("qubits.Q1A.readout_fg"), "{err}");
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(DeviceConfig::default_json()).unwrap();
        v["qubits"]["Q2B"]["t1_s"] = serde_json::json!("long");
        let err = DeviceConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("qubits.Q2B.t1_s"), "{err}");
        let mut v: serde_json::Value = serde_json::from_str(DeviceConfig::default_json()).unwrap();
        v["channel"]["typo"] = serde_json::json!(1);
        assert!(DeviceConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn rejects_even_mode_count() {
        let d = DeviceConfig {
            mode_count: 4,
            ..DeviceConfig::default()
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn mode_ladder_centre() {
        let d = DeviceConfig::default();
        assert_eq!(d.mode_detuning(3), 0.0);
        assert!((d.mode_detuning(1) + 2.0 * 2.0 * PI * 105e6).abs() < 1e-3);
    }

    #[test]
    fn reference_loaded_t1_near_anchor() {
        let d = DeviceConfig::default();
        let t = d.loaded_t1_at(Node::A, 2.0 * PI * 5.5e6).unwrap();
        assert!((t - 1.4e-6).abs() < 0.3 * 1.4e-6, "{t}");
    }
}
