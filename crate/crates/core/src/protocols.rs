//! Pulse schedules for gates and transfers, dynamic-phase bookkeeping and the
//! step lists of the multi-qubit entangling protocols.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceConfig, DeviceError, Node};
use crate::dynamics::{Axis, ControlFrame, DynamicsError, InstantGate, PulseSchedule, ScheduleItem};
use crate::hilbert::HilbertSpace;

pub const SCHEDULE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid transfer parameters: {0}")]
    InvalidParams(String),
    #[error("edge qubit index must be 1 or 3, got {0}")]
    BadEdge(u8),
    #[error("CZ needs `{0}` modelled with three levels")]
    NotQutrit(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("{0}")]
    Schedule(String),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

fn mhz(f: f64) -> f64 {
    2.0 * PI * f * 1e6
}

/// Controls of a cable transfer between `Q2A` and `Q2B`. Rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferParams {
    /// Detunings of `Q2A` and `Q2B` from the relay mode.
    pub dw_a: f64,
    pub dw_b: f64,
    pub g_a: f64,
    pub g_b: f64,
    /// Time each coupler stays on.
    pub tau: f64,
    /// Delay between turning on `g^A` and `g^B`.
    pub delta_tau: f64,
}

impl TransferParams {
    /// Full single-photon transfer.
    pub fn st() -> Self {
        TransferParams {
            dw_a: mhz(-0.95),
            dw_b: mhz(-1.79),
            g_a: mhz(4.08),
            g_b: mhz(4.06),
            tau: 72e-9,
            delta_tau: 13e-9,
        }
    }

    /// Half transfer producing a Bell pair.
    pub fn st_half() -> Self {
        TransferParams {
            dw_a: mhz(4.7),
            dw_b: mhz(5.4),
            g_a: mhz(2.89),
            g_b: mhz(6.11),
            tau: 62.8e-9,
            delta_tau: 5e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > self.delta_tau && self.delta_tau >= 0.0) {
            return Err(ProtocolError::InvalidParams(format!(
                "need tau > delta_tau >= 0, got tau = {} s, delta_tau = {} s",
                self.tau, self.delta_tau
            )));
        }
        if !(self.g_a > 0.0 && self.g_b > 0.0) {
            return Err(ProtocolError::InvalidParams("couplings must be positive".into()));
        }
        if !(self.dw_a.is_finite() && self.dw_b.is_finite()) {
            return Err(ProtocolError::InvalidParams("detunings must be finite".into()));
        }
        Ok(())
    }

    /// Wall-clock length of the transfer, from `g^A` on to `g^B` off.
    pub fn total_duration(&self) -> f64 {
        self.tau + self.delta_tau
    }
}

fn frame_item(f: ControlFrame) -> ScheduleItem {
    ScheduleItem::Frame(f)
}

/// Cable transfer: `g^A` turns on first, `g^B` follows `Δτ` later, and each
/// stays on for `τ`. Cable qubits carry the loaded `T1` while their coupler
/// is on.
pub fn schedule_state_transfer(params: &TransferParams, device: &DeviceConfig) -> Result<PulseSchedule> {
    params.validate()?;
    let (qa, qb) = (Node::A.qubit(2), Node::B.qubit(2));
    let base = |d: f64| ControlFrame::new(d).detune(&qa, params.dw_a).detune(&qb, params.dw_b);
    let with_t1 = |mut f: ControlFrame, node: Node, g: f64| -> Result<ControlFrame> {
        if let Some(t1) = device.coupler_on_t1(node, g)? {
            f = f.t1(&node.qubit(2), t1);
        }
        Ok(f.cable(node, g))
    };
    let mut items = Vec::new();
    if params.delta_tau > 0.0 {
        items.push(frame_item(with_t1(base(params.delta_tau), Node::A, params.g_a)?));
    }
    let both = with_t1(base(params.tau - params.delta_tau), Node::A, params.g_a)?;
    items.push(frame_item(with_t1(both, Node::B, params.g_b)?));
    if params.delta_tau > 0.0 {
        items.push(frame_item(with_t1(base(params.delta_tau), Node::B, params.g_b)?));
    }
    Ok(PulseSchedule::new(items)?)
}

fn check_edge(j: u8) -> Result<()> {
    if j == 1 || j == 3 {
        Ok(())
    } else {
        Err(ProtocolError::BadEdge(j))
    }
}

pub fn iswap_duration(device: &DeviceConfig) -> f64 {
    PI / (2.0 * device.exchange_coupling())
}

pub fn cz_duration(device: &DeviceConfig) -> f64 {
    PI / (SQRT_2 * device.exchange_coupling())
}

/// Gate frame on a node: `Q2` at idle, `Qj` at `dw_j`, the other edge qubit
/// pushed down by the spectator shift.
fn gate_frame(node: Node, j: u8, dw_j: f64, duration: f64, device: &DeviceConfig) -> Result<ControlFrame> {
    let q2 = node.qubit(2);
    let qj = node.qubit(j);
    let spectator = node.qubit(4 - j);
    let g = device.exchange_coupling();
    let spec_dw = device.idle_detuning(&spectator)? + 2.0 * PI * device.spectator_shift_hz;
    Ok(ControlFrame::new(duration)
        .detune(&q2, device.idle_detuning(&q2)?)
        .detune(&qj, dw_j)
        .detune(&spectator, spec_dw)
        .exchange(&qj, g)
        .exchange(&spectator, g))
}

/// Resonant exchange `|eg⟩ → −i|ge⟩` between `Qj` and `Q2` of `node`.
pub fn schedule_iswap(node: Node, j: u8, device: &DeviceConfig) -> Result<PulseSchedule> {
    check_edge(j)?;
    let dw2 = device.idle_detuning(&node.qubit(2))?;
    let f = gate_frame(node, j, dw2, iswap_duration(device), device)?;
    Ok(PulseSchedule::new(vec![frame_item(f)])?)
}

/// `Qj`'s `|e⟩` brought onto `Q2`'s `e→f` transition for one full
/// `|ee⟩ ↔ |gf⟩` cycle.
pub fn schedule_cz(node: Node, j: u8, device: &DeviceConfig, space: &HilbertSpace) -> Result<PulseSchedule> {
    check_edge(j)?;
    let q2 = node.qubit(2);
    if space.site(&q2).map(|s| s.dim).unwrap_or(0) != 3 {
        return Err(ProtocolError::NotQutrit(q2));
    }
    let dw = device.idle_detuning(&q2)? + device.anharmonicity(&q2)?;
    let f = gate_frame(node, j, dw, cz_duration(device), device)?;
    Ok(PulseSchedule::new(vec![frame_item(f)])?)
}

/// `φ = ∫ Δω dt` per site over the schedule's frames.
pub fn dynamic_phase_ledger(schedule: &PulseSchedule) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for f in schedule.frames() {
        for (site, dw) in &f.detunings {
            *out.entry(site.clone()).or_insert(0.0) += dw * f.duration;
        }
    }
    out
}

/// Wrap into `(−π, π]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Shift a later gate's axis by the accumulated phase on its site.
pub fn apply_virtual_z(gate: &InstantGate, ledger: &BTreeMap<String, f64>) -> InstantGate {
    let phi = ledger.get(&gate.site).copied().unwrap_or(0.0);
    let mut g = gate.clone();
    if g.axis != Axis::Z {
        g.phase = wrap_phase(g.phase - phi);
    }
    g
}

/// Append gates after `schedule`, each phase-corrected by the schedule's ledger.
pub fn with_corrected_gates(schedule: PulseSchedule, gates: &[InstantGate]) -> Result<PulseSchedule> {
    let ledger = dynamic_phase_ledger(&schedule);
    let mut items = schedule.items().to_vec();
    items.extend(gates.iter().map(|g| ScheduleItem::Gate(apply_virtual_z(g, &ledger))));
    Ok(PulseSchedule::new(items)?)
}

/// Node-level operation in a protocol. Sites name physical qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolStep {
    Rotation {
        site: String,
        axis: Axis,
        angle: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Controlled-Z between `Q2` of `node` and edge qubit `j`.
    Cz {
        node: Node,
        j: u8,
    },
    /// iSWAP moving the state of `from` onto `to` (initially in `|g⟩`).
    Iswap {
        from: String,
        to: String,
    },
    /// Cable transfer from `Q2A` to `Q2B`; `half` leaves an entangled pair.
    StateTransfer {
        half: bool,
    },
    Idle {
        sites: Vec<String>,
        duration: f64,
    },
    /// Steps acting on disjoint qubits at the same time.
    Parallel {
        steps: Vec<ProtocolStep>,
    },
    Sequence {
        steps: Vec<ProtocolStep>,
    },
}

impl ProtocolStep {
    pub fn parallel(steps: Vec<ProtocolStep>) -> Self {
        ProtocolStep::Parallel { steps }
    }

    pub fn sequence(steps: Vec<ProtocolStep>) -> Self {
        ProtocolStep::Sequence { steps }
    }

    pub fn rotation(site: &str, axis: Axis, angle: f64) -> Self {
        ProtocolStep::Rotation {
            site: site.to_string(),
            axis,
            angle,
            phase: 0.0,
        }
    }

    /// `−Y/2` on the target, CZ, then `Y/2` on the target.
    pub fn cnot(node: Node, j: u8) -> Self {
        let t = node.qubit(j);
        ProtocolStep::sequence(vec![
            ProtocolStep::rotation(&t, Axis::Y, -PI / 2.0),
            ProtocolStep::Cz { node, j },
            ProtocolStep::rotation(&t, Axis::Y, PI / 2.0),
        ])
    }

    pub fn iswap(from: &str, to: &str) -> Self {
        ProtocolStep::Iswap {
            from: from.to_string(),
            to: to.to_string(),
        }
    }

    pub fn idle(sites: &[&str], duration: f64) -> Self {
        ProtocolStep::Idle {
            sites: sites.iter().map(|s| s.to_string()).collect(),
            duration,
        }
    }

    /// Counts of leaf steps by kind name.
    pub fn count_kinds(steps: &[ProtocolStep]) -> BTreeMap<&'static str, usize> {
        fn walk(s: &ProtocolStep, out: &mut BTreeMap<&'static str, usize>) {
            let k = match s {
                ProtocolStep::Rotation { .. } => "rotation",
                ProtocolStep::Cz { .. } => "cz",
                ProtocolStep::Iswap { .. } => "iswap",
                ProtocolStep::StateTransfer { half: false } => "st",
                ProtocolStep::StateTransfer { half: true } => "st_half",
                ProtocolStep::Idle { .. } => "idle",
                ProtocolStep::Parallel { steps: v } | ProtocolStep::Sequence { steps: v } => {
                    v.iter().for_each(|c| walk(c, out));
                    return;
                }
            };
            *out.entry(k).or_insert(0) += 1;
        }
        let mut out = BTreeMap::new();
        steps.iter().for_each(|s| walk(s, &mut out));
        out
    }
}

/// `Y/2` on `Q2`, then CNOTs from `Q2` onto `Q1` and `Q3`.
pub fn ghz_prep_steps(node: Node) -> Vec<ProtocolStep> {
    vec![
        ProtocolStep::rotation(&node.qubit(2), Axis::Y, PI / 2.0),
        ProtocolStep::cnot(node, 1),
        ProtocolStep::cnot(node, 3),
    ]
}

/// Single-qubit `Z` angles that undo the dynamic phases of one CZ frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CzCorrection {
    pub edge: f64,
    pub center: f64,
    pub spectator: f64,
}

/// Pulse-level GHZ preparation, each CZ followed by its calibrated phase
/// corrections `corrections[&j]`.
pub fn schedule_ghz_prep(
    node: Node,
    device: &DeviceConfig,
    space: &HilbertSpace,
    corrections: &BTreeMap<u8, CzCorrection>,
) -> Result<PulseSchedule> {
    let q2 = node.qubit(2);
    let mut items = vec![ScheduleItem::Gate(InstantGate::new(&q2, Axis::Y, PI / 2.0))];
    for j in [1u8, 3] {
        let t = node.qubit(j);
        let spectator = node.qubit(4 - j);
        items.push(ScheduleItem::Gate(InstantGate::new(&t, Axis::Y, -PI / 2.0)));
        items.extend(schedule_cz(node, j, device, space)?.items().iter().cloned());
        let c = corrections
            .get(&j)
            .copied()
            .ok_or_else(|| ProtocolError::Schedule(format!("missing CZ phase calibration for Q{j}")))?;
        for (site, th) in [(&t, c.edge), (&q2, c.center), (&spectator, c.spectator)] {
            if th != 0.0 {
                items.push(ScheduleItem::Gate(InstantGate::new(site, Axis::Z, wrap_phase(th))));
            }
        }
        items.push(ScheduleItem::Gate(InstantGate::new(&t, Axis::Y, PI / 2.0)));
    }
    Ok(PulseSchedule::new(items)?)
}

/// Sequential transfer of a node-A GHZ state to node B: three cable hops,
/// with iSWAPs shuffling each qubit in and out of the cable qubits.
pub fn schedule_ghz_transfer(device: &DeviceConfig) -> Vec<ProtocolStep> {
    let t_st = TransferParams::st().total_duration();
    let t_sw = iswap_duration(device);
    let st = || ProtocolStep::StateTransfer { half: false };
    vec![
        ProtocolStep::parallel(vec![st(), ProtocolStep::idle(&["Q1A", "Q3A"], t_st)]),
        ProtocolStep::parallel(vec![
            ProtocolStep::iswap("Q2B", "Q1B"),
            ProtocolStep::iswap("Q1A", "Q2A"),
            ProtocolStep::idle(&["Q3A"], t_sw),
        ]),
        ProtocolStep::parallel(vec![st(), ProtocolStep::idle(&["Q1B", "Q3A"], t_st)]),
        ProtocolStep::parallel(vec![
            ProtocolStep::iswap("Q2B", "Q3B"),
            ProtocolStep::iswap("Q3A", "Q2A"),
            ProtocolStep::idle(&["Q1B"], t_sw),
        ]),
        ProtocolStep::parallel(vec![st(), ProtocolStep::idle(&["Q1B", "Q3B"], t_st)]),
    ]
}

/// Network GHZ protocol as three stages: Bell pair across the cable, then
/// 4-qubit and 6-qubit GHZ states by local CNOTs.
pub fn schedule_network_ghz(_device: &DeviceConfig) -> [Vec<ProtocolStep>; 3] {
    [
        vec![
            ProtocolStep::rotation("Q2A", Axis::X, PI),
            ProtocolStep::StateTransfer { half: true },
            ProtocolStep::rotation("Q2B", Axis::X, PI),
        ],
        vec![ProtocolStep::parallel(vec![
            ProtocolStep::cnot(Node::A, 1),
            ProtocolStep::cnot(Node::B, 1),
        ])],
        vec![ProtocolStep::parallel(vec![
            ProtocolStep::cnot(Node::A, 3),
            ProtocolStep::cnot(Node::B, 3),
            ProtocolStep::idle(&["Q1A", "Q1B"], 70e-9),
        ])],
    ]
}

#[derive(Serialize, Deserialize)]
struct FrameJson {
    duration_ns: f64,
    detunings: BTreeMap<String, f64>,
    couplings: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    exchange: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    t1_overrides_us: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct GateJson {
    site: String,
    axis: Axis,
    angle_rad: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    phase_rad: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ItemJson {
    Frame(FrameJson),
    Gate(GateJson),
}

#[derive(Serialize, Deserialize)]
struct ScheduleJson {
    schema_version: u32,
    items: Vec<ItemJson>,
}

fn to_mhz(w: f64) -> f64 {
    w / (2.0 * PI * 1e6)
}

/// Schedule as JSON: frames in ns and MHz, gates in radians.
pub fn schedule_to_json(schedule: &PulseSchedule) -> serde_json::Value {
    let items = schedule
        .items()
        .iter()
        .map(|it| match it {
            ScheduleItem::Frame(f) => ItemJson::Frame(FrameJson {
                duration_ns: f.duration * 1e9,
                detunings: f.detunings.iter().map(|(k, v)| (k.clone(), to_mhz(*v))).collect(),
                couplings: f
                    .cable_couplings
                    .iter()
                    .map(|(n, v)| (format!("g{n}"), to_mhz(*v)))
                    .collect(),
                exchange: f.exchange.iter().map(|(k, v)| (k.clone(), to_mhz(*v))).collect(),
                t1_overrides_us: f.t1_overrides.iter().map(|(k, v)| (k.clone(), v * 1e6)).collect(),
            }),
            ScheduleItem::Gate(g) => ItemJson::Gate(GateJson {
                site: g.site.clone(),
                axis: g.axis,
                angle_rad: g.angle,
                phase_rad: g.phase,
            }),
        })
        .collect();
    serde_json::to_value(ScheduleJson {
        schema_version: SCHEDULE_SCHEMA_VERSION,
        items,
    })
    .expect("schedule serializes")
}

pub fn schedule_from_json(value: &serde_json::Value) -> Result<PulseSchedule> {
    let s: ScheduleJson = serde_json::from_value(value.clone()).map_err(|e| ProtocolError::Schedule(e.to_string()))?;
    if s.schema_version != SCHEDULE_SCHEMA_VERSION {
        return Err(ProtocolError::Schedule(format!(
            "unsupported schedule schema version {}",
            s.schema_version
        )));
    }
    let from_mhz = |v: f64| v * 2.0 * PI * 1e6;
    let mut items = Vec::new();
    for it in s.items {
        items.push(match it {
            ItemJson::Frame(f) => {
                let mut cf = ControlFrame::new(f.duration_ns * 1e-9);
                cf.detunings = f.detunings.into_iter().map(|(k, v)| (k, from_mhz(v))).collect();
                for (k, v) in f.couplings {
                    let node = match k.as_str() {
                        "gA" => Node::A,
                        "gB" => Node::B,
                        other => return Err(ProtocolError::Schedule(format!("unknown coupling `{other}`"))),
                    };
                    cf.cable_couplings.insert(node, from_mhz(v));
                }
                cf.exchange = f.exchange.into_iter().map(|(k, v)| (k, from_mhz(v))).collect();
                cf.t1_overrides = f.t1_overrides_us.into_iter().map(|(k, v)| (k, v * 1e-6)).collect();
                ScheduleItem::Frame(cf)
            }
            ItemJson::Gate(g) => ScheduleItem::Gate(InstantGate {
                site: g.site,
                axis: g.axis,
                angle: g.angle_rad,
                phase: g.phase_rad,
            }),
        });
    }
    Ok(PulseSchedule::new(items)?)
}
