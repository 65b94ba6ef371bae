//! Rotating-frame Hamiltonians and fixed-step Lindblad integration over
//! piecewise-constant pulse schedules.
//!
//! Qubit sites are labelled `Q{j}{node}` (`Q1A` … `Q3B`) and cable modes
//! `m1` … `mM`. The frame rotates at the centre mode, so mode `m` sits at
//! `(m − (M+1)/2)·FSR`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceConfig, Node};
use crate::hilbert::{
    embed_operator, embed_product, lowering, max_abs, number, CMatrix, CVector, DensityMatrix, HilbertError,
    HilbertSpace, Operator, SiteKind, C64,
};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("site `{0}` is neither a qubit (Q1A..Q3B) nor a mode (m1..mM)")]
    UnlabeledSite(String),
    #[error("mode sites must be m1..mM with M odd, found {0} modes")]
    BadModeSet(usize),
    #[error("no decoherence data for site `{0}`")]
    MissingLifetime(String),
    #[error("trace drifted to {trace} at t = {time_ns} ns (step {step_ns} ns)")]
    TraceDrift { trace: f64, time_ns: f64, step_ns: f64 },
    #[error("initial state is not physical: {0}")]
    NonPhysical(String),
    #[error("schedule is empty")]
    EmptySchedule,
    #[error("frame duration must be positive, got {0} s")]
    BadDuration(f64),
    #[error("gate angle {0} outside (-2π, 2π]")]
    BadAngle(f64),
    #[error("{0}")]
    Device(#[from] crate::device::DeviceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Piecewise-constant control segment. All rates in rad/s.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlFrame {
    pub duration: f64,
    /// Qubit detuning from the frame centre, per qubit label.
    #[serde(default)]
    pub detunings: BTreeMap<String, f64>,
    /// Qubit–cable coupling `g^n` per node.
    #[serde(default)]
    pub cable_couplings: BTreeMap<Node, f64>,
    /// Capacitive coupling `g_{j,2}` keyed by the edge qubit (`Q1A`, `Q3B`, …).
    #[serde(default)]
    pub exchange: BTreeMap<String, f64>,
    /// Per-site `T1` replacing the device value during this frame.
    #[serde(default)]
    pub t1_overrides: BTreeMap<String, f64>,
}

impl ControlFrame {
    pub fn new(duration: f64) -> Self {
        ControlFrame {
            duration,
            ..Default::default()
        }
    }

    pub fn detune(mut self, site: &str, dw: f64) -> Self {
        self.detunings.insert(site.to_string(), dw);
        self
    }

    pub fn cable(mut self, node: Node, g: f64) -> Self {
        self.cable_couplings.insert(node, g);
        self
    }

    pub fn exchange(mut self, edge: &str, g: f64) -> Self {
        self.exchange.insert(edge.to_string(), g);
        self
    }

    pub fn t1(mut self, site: &str, t1: f64) -> Self {
        self.t1_overrides.insert(site.to_string(), t1);
        self
    }

    pub fn detuning(&self, site: &str) -> f64 {
        self.detunings.get(site).copied().unwrap_or(0.0)
    }

    pub fn coupling(&self, node: Node) -> f64 {
        self.cable_couplings.get(&node).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Instantaneous single-qubit rotation `exp(−i·angle/2·n·σ)`. For `X` and `Y`
/// the axis is rotated in the equatorial plane by `phase` (virtual Z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantGate {
    pub site: String,
    pub axis: Axis,
    pub angle: f64,
    #[serde(default)]
    pub phase: f64,
}

impl InstantGate {
    pub fn new(site: &str, axis: Axis, angle: f64) -> Self {
        InstantGate {
            site: site.to_string(),
            axis,
            angle,
            phase: 0.0,
        }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    /// 2×2 unitary in the {g, e} basis.
    pub fn unitary(&self) -> CMatrix {
        rotation(self.axis, self.angle, self.phase)
    }
}

pub fn rotation(axis: Axis, angle: f64, phase: f64) -> CMatrix {
    let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
    let i = C64::new(0.0, 1.0);
    match axis {
        Axis::Z => {
            let m = Matrix2::new(
                (-i * angle / 2.0).exp(),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                (i * angle / 2.0).exp(),
            );
            CMatrix::from_fn(2, 2, |r, k| m[(r, k)])
        }
        Axis::X | Axis::Y => {
            let phi = if axis == Axis::X { phase } else { phase + PI / 2.0 };
            let e = C64::from_polar(1.0, phi);
            // cos(θ/2) I − i sin(θ/2)(cosφ X + sinφ Y)
            let off_upper = -i * s * e.conj();
            let off_lower = -i * s * e;
            CMatrix::from_row_slice(2, 2, &[C64::new(c, 0.0), off_upper, off_lower, C64::new(c, 0.0)])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScheduleItem {
    Frame(ControlFrame),
    Gate(InstantGate),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    items: Vec<ScheduleItem>,
}

impl PulseSchedule {
    pub fn new(items: Vec<ScheduleItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(DynamicsError::EmptySchedule);
        }
        for it in &items {
            match it {
                ScheduleItem::Frame(f) => {
                    if !(f.duration > 0.0 && f.duration.is_finite()) {
                        return Err(DynamicsError::BadDuration(f.duration));
                    }
                }
                ScheduleItem::Gate(g) => {
                    if !(g.angle > -2.0 * PI && g.angle <= 2.0 * PI) {
                        return Err(DynamicsError::BadAngle(g.angle));
                    }
                }
            }
        }
        Ok(PulseSchedule { items })
    }

    pub fn items(&self) -> &[ScheduleItem] {
        &self.items
    }

    pub fn frames(&self) -> impl Iterator<Item = &ControlFrame> {
        self.items.iter().filter_map(|i| match i {
            ScheduleItem::Frame(f) => Some(f),
            _ => None,
        })
    }

    pub fn duration(&self) -> f64 {
        self.frames().map(|f| f.duration).sum()
    }

    pub fn then(mut self, other: PulseSchedule) -> Self {
        self.items.extend(other.items);
        self
    }
}

/// Parsed `Q{j}{node}` label.
pub fn parse_qubit_label(label: &str) -> Option<(u8, Node)> {
    let b = label.as_bytes();
    if b.len() != 3 || b[0] != b'Q' {
        return None;
    }
    let j = match b[1] {
        b'1' => 1,
        b'2' => 2,
        b'3' => 3,
        _ => return None,
    };
    let node = match b[2] {
        b'A' => Node::A,
        b'B' => Node::B,
        _ => return None,
    };
    Some((j, node))
}

pub fn parse_mode_label(label: &str) -> Option<usize> {
    label.strip_prefix('m')?.parse().ok().filter(|m| *m >= 1)
}

/// Number of mode sites, checked to be `m1..mM` with `M` odd (or zero).
fn mode_count(space: &HilbertSpace) -> Result<usize> {
    let mut modes = Vec::new();
    for s in space.sites() {
        match s.kind {
            SiteKind::Mode => {
                let m = parse_mode_label(&s.label).ok_or_else(|| DynamicsError::UnlabeledSite(s.label.clone()))?;
                modes.push(m);
            }
            SiteKind::Qubit => {
                parse_qubit_label(&s.label).ok_or_else(|| DynamicsError::UnlabeledSite(s.label.clone()))?;
            }
        }
    }
    modes.sort_unstable();
    let m = modes.len();
    if m > 0 && (m % 2 == 0 || modes.iter().enumerate().any(|(i, v)| *v != i + 1)) {
        return Err(DynamicsError::BadModeSet(m));
    }
    Ok(m)
}

/// Device mode index corresponding to space mode `m` when the space holds
/// `count` modes centred on the relay mode.
fn device_mode_index(device: &DeviceConfig, m: usize, count: usize) -> Option<usize> {
    let shifted = m as i64 - (count as i64 + 1) / 2 + device.communication_mode as i64;
    usize::try_from(shifted).ok().filter(|v| *v >= 1)
}

fn ladder_coefficient(m: usize, count: usize, fsr: f64) -> f64 {
    (m as f64 - (count as f64 + 1.0) / 2.0) * 2.0 * PI * fsr
}

/// Hamiltonian (in rad/s, ħ = 1) of one control frame. Controls naming sites
/// absent from `space` are ignored.
pub fn build_hamiltonian(frame: &ControlFrame, space: &HilbertSpace, device: &DeviceConfig) -> Result<Operator> {
    let m_count = mode_count(space)?;
    let dim = space.dim();
    let mut h = CMatrix::zeros(dim, dim);
    for site in space.sites() {
        let d = site.dim;
        match site.kind {
            SiteKind::Qubit => {
                let dw = frame.detuning(&site.label);
                let mut local = number(d) * C64::new(dw, 0.0);
                if d == 3 {
                    let eta = device.anharmonicity(&site.label)?;
                    local[(2, 2)] += C64::new(eta, 0.0);
                }
                if local.iter().any(|v| *v != C64::new(0.0, 0.0)) {
                    h += embed_operator(&local, &site.label, space)?.matrix();
                }
            }
            SiteKind::Mode => {
                let m = parse_mode_label(&site.label).expect("checked");
                let w = ladder_coefficient(m, m_count, device.fsr_hz);
                if w != 0.0 {
                    h += embed_operator(&(number(d) * C64::new(w, 0.0)), &site.label, space)?.matrix();
                }
            }
        }
    }
    let exchange = |a: &str, b: &str, g: f64, h: &mut CMatrix| -> Result<()> {
        if g == 0.0 || !space.contains(a) || !space.contains(b) {
            return Ok(());
        }
        let la = lowering(space.site(a)?.dim);
        let lb = lowering(space.site(b)?.dim);
        let term = embed_product(&[(a, &la), (b, &lb.adjoint())], space)?;
        let m = term.matrix() * C64::new(g, 0.0);
        *h += &m;
        *h += m.adjoint();
        Ok(())
    };
    for (edge, g) in &frame.exchange {
        if let Some((j, node)) = parse_qubit_label(edge) {
            if j != 2 {
                exchange(&node.qubit(2), edge, *g, &mut h)?;
            }
        }
    }
    for (node, g) in &frame.cable_couplings {
        let q = node.qubit(2);
        for m in 1..=m_count {
            let sign = match node {
                Node::A => 1.0,
                Node::B => {
                    if m % 2 == 1 {
                        -1.0
                    } else {
                        1.0
                    }
                }
            };
            exchange(&q, &crate::device::mode_label(m), sign * g, &mut h)?;
        }
    }
    // exact Hermitian symmetrization
    let h = CMatrix::from_fn(dim, dim, |i, j| (h[(i, j)] + h[(j, i)].conj()) * 0.5);
    Ok(Operator::new(space.clone(), h)?)
}

/// Per-site lifetime overrides; `f64::INFINITY` disables a channel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseOverrides {
    #[serde(default)]
    pub t1: BTreeMap<String, f64>,
    #[serde(default)]
    pub t_phi: BTreeMap<String, f64>,
    /// Drop every collapse operator.
    #[serde(default)]
    pub lossless: bool,
    /// Drop qubit dephasing.
    #[serde(default)]
    pub no_dephasing: bool,
}

impl NoiseOverrides {
    pub fn lossless() -> Self {
        NoiseOverrides {
            lossless: true,
            ..Default::default()
        }
    }
}

/// Lindblad operators for every site of `space`.
pub fn collapse_operators(
    device: &DeviceConfig,
    space: &HilbertSpace,
    overrides: &NoiseOverrides,
    frame_t1: &BTreeMap<String, f64>,
) -> Result<Vec<CMatrix>> {
    if overrides.lossless {
        return Ok(Vec::new());
    }
    let m_count = mode_count(space)?;
    let mut out = Vec::new();
    for site in space.sites() {
        let d = site.dim;
        let t1_over = frame_t1
            .get(&site.label)
            .or_else(|| overrides.t1.get(&site.label))
            .copied();
        match site.kind {
            SiteKind::Qubit => {
                let q = device
                    .qubit(&site.label)
                    .map_err(|_| DynamicsError::MissingLifetime(site.label.clone()))?;
                let t1 = t1_over.unwrap_or(q.t1_s);
                if t1.is_finite() {
                    for n in 1..d {
                        let mut l = CMatrix::zeros(d, d);
                        l[(n - 1, n)] = C64::new((n as f64 / t1).sqrt(), 0.0);
                        out.push(embed_operator(&l, &site.label, space)?.into_matrix());
                    }
                }
                let tphi = overrides.t_phi.get(&site.label).copied().unwrap_or(q.t_phi_s);
                if !overrides.no_dephasing && tphi.is_finite() {
                    let l = number(d) * C64::new(2.0 * (1.0 / (2.0 * tphi)).sqrt(), 0.0);
                    out.push(embed_operator(&l, &site.label, space)?.into_matrix());
                }
            }
            SiteKind::Mode => {
                let m = parse_mode_label(&site.label).expect("checked");
                let t1 = match t1_over {
                    Some(t) => t,
                    None => device_mode_index(device, m, m_count)
                        .and_then(|k| device.mode_lifetime(k))
                        .ok_or_else(|| DynamicsError::MissingLifetime(site.label.clone()))?,
                };
                if t1.is_finite() {
                    let l = lowering(d) * C64::new((1.0 / t1).sqrt(), 0.0);
                    out.push(embed_operator(&l, &site.label, space)?.into_matrix());
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Upper bound on the RK4 step, in seconds.
    pub dt_max: f64,
    /// Record a sample every this many steps; 0 records frame boundaries only.
    pub sample_stride: usize,
    #[serde(default)]
    pub noise: NoiseOverrides,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dt_max: 1e-10,
            sample_stride: 0,
            noise: NoiseOverrides::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// `⟨n⟩` per site label, aligned with `times`.
    pub populations: BTreeMap<String, Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory has at least one sample")
    }

    fn push(&mut self, t: f64, rho: DensityMatrix, number_ops: &[(String, CMatrix)]) {
        let replace = self.times.last().is_some_and(|last| (t - last).abs() <= 1e-18);
        for (label, n) in number_ops {
            let v = rho.expectation(n).re;
            let series = self.populations.entry(label.clone()).or_default();
            if replace {
                *series.last_mut().expect("aligned") = v;
            } else {
                series.push(v);
            }
        }
        if replace {
            *self.states.last_mut().expect("aligned") = rho;
        } else {
            self.times.push(t);
            self.states.push(rho);
        }
    }

    /// Long-format CSV `time_ns,site,population`.
    pub fn write_populations_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["time_ns", "site", "population"]).map_err(csv_io)?;
        for (k, t) in self.times.iter().enumerate() {
            for (label, series) in &self.populations {
                wtr.write_record([format!("{:.6}", t * 1e9), label.clone(), format!("{:.12}", series[k])])
                    .map_err(csv_io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Binary dump of the final state: `u64` LE dimension, then row-major
    /// `(re, im)` pairs as `f64` LE.
    pub fn write_state_dump<W: Write>(&self, w: W) -> Result<()> {
        write_state_binary(self.final_state().matrix(), w)
    }
}

fn csv_io(e: csv::Error) -> DynamicsError {
    DynamicsError::Io(std::io::Error::other(e))
}

pub fn write_state_binary<W: Write>(m: &CMatrix, mut w: W) -> Result<()> {
    let d = m.nrows();
    w.write_all(&(d as u64).to_le_bytes())?;
    for i in 0..d {
        for j in 0..d {
            w.write_all(&m[(i, j)].re.to_le_bytes())?;
            w.write_all(&m[(i, j)].im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_state_binary(bytes: &[u8]) -> Option<CMatrix> {
    let d = u64::from_le_bytes(bytes.get(..8)?.try_into().ok()?) as usize;
    if bytes.len() != 8 + 16 * d * d {
        return None;
    }
    let mut m = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let o = 8 + 16 * (i * d + j);
            let re = f64::from_le_bytes(bytes[o..o + 8].try_into().ok()?);
            let im = f64::from_le_bytes(bytes[o + 8..o + 16].try_into().ok()?);
            m[(i, j)] = C64::new(re, im);
        }
    }
    Some(m)
}

/// Embedded unitary of a gate; fails if the excitation cap would truncate it.
pub fn gate_operator(gate: &InstantGate, space: &HilbertSpace) -> Result<CMatrix> {
    let d = space.site(&gate.site)?.dim;
    let mut local = CMatrix::identity(d, d);
    let u = gate.unitary();
    for r in 0..2 {
        for c in 0..2 {
            local[(r, c)] = u[(r, c)];
        }
    }
    let full = embed_operator(&local, &gate.site, space)?.into_matrix();
    if space.max_excitations().is_some() {
        let n = full.nrows();
        let leak = max_abs(&(full.adjoint() * &full - CMatrix::identity(n, n)));
        if leak > 1e-12 {
            return Err(HilbertError::SubspaceLeak(leak).into());
        }
    }
    Ok(full)
}

/// Integrator of one distinct frame, reused while the frame repeats.
struct FramePlan {
    frame: ControlFrame,
    integ: Integrator,
    n: usize,
    dt: f64,
    map: Option<CMatrix>,
}

/// One RK4 step of `dρ/dt = Kρ + ρK† + Σ cρc†` as a map on column-stacked
/// `ρ`. For a constant generator `L` the step is exactly
/// `1 + hL + (hL)²/2 + (hL)³/6 + (hL)⁴/24`.
struct Integrator {
    step: CMatrix,
    dim: usize,
}

impl Integrator {
    fn new(h: &CMatrix, collapse: &[CMatrix], dt: f64) -> Self {
        let dim = h.nrows();
        let mut k = h * C64::new(0.0, -1.0);
        for c in collapse {
            k -= (c.adjoint() * c) * C64::new(0.5, 0.0);
        }
        let eye = CMatrix::identity(dim, dim);
        let mut l = eye.kronecker(&k) + k.conjugate().kronecker(&eye);
        for c in collapse {
            l += c.conjugate().kronecker(c);
        }
        let hl = l * C64::new(dt, 0.0);
        let big = CMatrix::identity(dim * dim, dim * dim);
        let mut p = big.clone();
        for n in [4.0, 3.0, 2.0, 1.0] {
            p = &big + (&hl * p) * C64::new(1.0 / n, 0.0);
        }
        Integrator { step: p, dim }
    }

    fn advance(&self, v: &mut CVector, tmp: &mut CVector) {
        tmp.gemv(C64::new(1.0, 0.0), &self.step, v, C64::new(0.0, 0.0));
        std::mem::swap(v, tmp);
    }

    /// `n` steps at once, by repeated squaring.
    fn power(&self, mut n: usize) -> CMatrix {
        let mut base = self.step.clone();
        let mut acc = CMatrix::identity(base.nrows(), base.ncols());
        while n > 0 {
            if n & 1 == 1 {
                acc = &acc * &base;
            }
            n >>= 1;
            if n > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    fn unvec(&self, v: &CVector) -> CMatrix {
        CMatrix::from_column_slice(self.dim, self.dim, v.as_slice())
    }
}

/// RK4 step for a frame: `min(dt_max, 0.02/‖H‖_max, duration/10)`, shrunk so
/// an integer number of steps fills the frame.
pub fn frame_step(h: &CMatrix, duration: f64, dt_max: f64) -> (usize, f64) {
    let hmax = h.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut step = dt_max.min(duration / 10.0);
    if hmax > 0.0 {
        step = step.min(0.02 / hmax);
    }
    let n = (duration / step).ceil().max(1.0) as usize;
    (n, duration / n as f64)
}

pub const TRACE_DRIFT_LIMIT: f64 = 1e-5;

/// Integrate the master equation over `schedule` starting from `rho0`.
pub fn evolve_master_equation(
    rho0: &DensityMatrix,
    schedule: &PulseSchedule,
    device: &DeviceConfig,
    options: &EvolveOptions,
) -> Result<Trajectory> {
    let space = rho0.space().clone();
    DensityMatrix::new(space.clone(), rho0.matrix().clone()).map_err(|e| DynamicsError::NonPhysical(e.to_string()))?;
    let number_ops: Vec<(String, CMatrix)> = space
        .sites()
        .iter()
        .map(|s| {
            Ok((
                s.label.clone(),
                embed_operator(&number(s.dim), &s.label, &space)?.into_matrix(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        populations: BTreeMap::new(),
    };
    let dim = space.dim();
    let mut rho = rho0.matrix().clone();
    let mut t = 0.0;
    traj.push(t, rho0.clone(), &number_ops);
    let items = schedule.items();
    let mut plan: Option<FramePlan> = None;
    for (i, item) in items.iter().enumerate() {
        match item {
            ScheduleItem::Gate(g) => {
                if !space.contains(&g.site) {
                    continue;
                }
                let u = gate_operator(g, &space)?;
                rho = &u * &rho * u.adjoint();
                traj.push(t, DensityMatrix::new_unchecked(space.clone(), rho.clone()), &number_ops);
            }
            ScheduleItem::Frame(f) => {
                if plan.as_ref().is_none_or(|p| &p.frame != f) {
                    let h = build_hamiltonian(f, &space, device)?;
                    let c = collapse_operators(device, &space, &options.noise, &f.t1_overrides)?;
                    let (n, dt) = frame_step(h.matrix(), f.duration, options.dt_max);
                    let integ = Integrator::new(h.matrix(), &c, dt);
                    let interior = options.sample_stride > 0 && options.sample_stride < n;
                    let run = items[i..]
                        .iter()
                        .take_while(|it| matches!(it, ScheduleItem::Frame(g) if g == f))
                        .count();
                    let squarings = (usize::BITS - n.leading_zeros()) as usize;
                    let map = (!interior && 2 * squarings * dim * dim < run * n).then(|| integ.power(n));
                    plan = Some(FramePlan {
                        frame: f.clone(),
                        integ,
                        n,
                        dt,
                        map,
                    });
                }
                let p = plan.as_ref().expect("planned");
                let mut v = CVector::from_column_slice(rho.as_slice());
                let mut tmp = CVector::zeros(dim * dim);
                let t0 = t;
                let (first, skip) = match &p.map {
                    Some(m) => {
                        tmp.gemv(C64::new(1.0, 0.0), m, &v, C64::new(0.0, 0.0));
                        std::mem::swap(&mut v, &mut tmp);
                        (p.n, true)
                    }
                    None => (1, false),
                };
                for k in first..=p.n {
                    if !skip {
                        p.integ.advance(&mut v, &mut tmp);
                    }
                    t = t0 + p.dt * k as f64;
                    let boundary = k == p.n;
                    if boundary || (options.sample_stride > 0 && k % options.sample_stride == 0) {
                        rho = p.integ.unvec(&v);
                        let tr = rho.trace().re;
                        if (tr - 1.0).abs() > TRACE_DRIFT_LIMIT {
                            return Err(DynamicsError::TraceDrift {
                                trace: tr,
                                time_ns: t * 1e9,
                                step_ns: p.dt * 1e9,
                            });
                        }
                        traj.push(t, DensityMatrix::new_unchecked(space.clone(), rho.clone()), &number_ops);
                    }
                }
            }
        }
    }
    Ok(traj)
}

/// Final state only; shorthand for boundary-sampled evolution.
pub fn evolve_final(
    rho0: &DensityMatrix,
    schedule: &PulseSchedule,
    device: &DeviceConfig,
    options: &EvolveOptions,
) -> Result<DensityMatrix> {
    let mut opts = options.clone();
    opts.sample_stride = 0;
    let traj = evolve_master_equation(rho0, schedule, device, &opts)?;
    Ok(traj.states.into_iter().last().expect("nonempty"))
}

pub fn excitation_populations<'a>(traj: &'a Trajectory, site: &str) -> Result<&'a [f64]> {
    traj.populations
        .get(site)
        .map(|v| v.as_slice())
        .ok_or_else(|| HilbertError::UnknownSite(site.to_string()).into())
}

/// Kraus operators of idle relaxation and pure dephasing over time `t`.
pub fn idle_kraus(t: f64, t1: f64, t_phi: f64) -> Vec<CMatrix> {
    let gamma = if t1.is_finite() { 1.0 - (-t / t1).exp() } else { 0.0 };
    let lam = if t_phi.is_finite() { (-t / t_phi).exp() } else { 1.0 };
    let p = (1.0 - lam) / 2.0;
    let c = |v: f64| C64::new(v, 0.0);
    let z = c(0.0);
    let amp = [
        CMatrix::from_row_slice(2, 2, &[c(1.0), z, z, c((1.0 - gamma).sqrt())]),
        CMatrix::from_row_slice(2, 2, &[z, c(gamma.sqrt()), z, z]),
    ];
    let deph = [
        CMatrix::identity(2, 2) * c((1.0 - p).sqrt()),
        CMatrix::from_row_slice(2, 2, &[c(p.sqrt()), z, z, c(-p.sqrt())]),
    ];
    let mut out = Vec::with_capacity(4);
    for a in &amp {
        for d in &deph {
            let k = d * a;
            if k.norm() > 0.0 {
                out.push(k);
            }
        }
    }
    out
}
