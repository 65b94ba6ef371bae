//! Register-level execution of protocol steps. Transfers and iSWAPs act as
//! channels extracted from master-equation runs, CZs as calibrated unitaries
//! or a depolarized proxy, and idling qubits decay through Kraus maps.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{mode_label, DeviceConfig, Node};
use crate::dynamics::{
    evolve_final, idle_kraus, rotation, Axis, DynamicsError, EvolveOptions, InstantGate, NoiseOverrides, PulseSchedule,
    ScheduleItem,
};
use crate::hilbert::{
    ghz_vector, hermitian_part, kron, partial_trace, pauli_matrices, process_fidelity, CMatrix, CVector, DensityMatrix,
    HilbertError, HilbertSpace, ProcessMatrix, Site, C64,
};
use crate::protocols::{
    schedule_cz, schedule_ghz_prep, schedule_iswap, schedule_state_transfer, CzCorrection, ProtocolError, ProtocolStep,
    TransferParams,
};
use crate::tomography::{process_input_states, reconstruct_process, TomographyError};

/// Physical qubits of both nodes in register order.
pub const REGISTER: [&str; 6] = ["Q1A", "Q2A", "Q3A", "Q1B", "Q2B", "Q3B"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("qubit `{0}` is not in the register")]
    NotInRegister(String),
    #[error("no model for {0}")]
    MissingModel(String),
    #[error("CZ conditional phase {0:.6} rad is not π")]
    ConditionalPhase(f64),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Tomography(#[from] TomographyError),
    #[error(transparent)]
    Device(#[from] crate::device::DeviceError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn c(v: f64) -> C64 {
    C64::new(v, 0.0)
}

fn unit(d: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(i, j)] = c(1.0);
    m
}

/// Embed an operator on `targets` (in the operator's factor order) into `n`
/// qubits, first qubit most significant.
pub fn embed_local(op: &CMatrix, targets: &[usize], n: usize) -> CMatrix {
    let d = 1usize << n;
    let k = targets.len();
    let sub = |i: usize| -> usize {
        targets
            .iter()
            .fold(0usize, |acc, &q| (acc << 1) | ((i >> (n - 1 - q)) & 1))
    };
    let mask: usize = targets.iter().map(|&q| 1usize << (n - 1 - q)).sum();
    let mut out = CMatrix::zeros(d, d);
    for i in 0..d {
        let si = sub(i);
        let rest = i & !mask;
        for sj in 0..(1usize << k) {
            let v = op[(sj, si)];
            if v == c(0.0) {
                continue;
            }
            let mut o = rest;
            for (idx, &q) in targets.iter().enumerate() {
                if (sj >> (k - 1 - idx)) & 1 == 1 {
                    o |= 1 << (n - 1 - q);
                }
            }
            out[(o, i)] += v;
        }
    }
    out
}

/// Completely positive map on a few qubits, stored as Kraus operators.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalChannel {
    n_qubits: usize,
    kraus: Vec<CMatrix>,
}

impl LocalChannel {
    pub fn from_kraus(n_qubits: usize, kraus: Vec<CMatrix>) -> Self {
        LocalChannel { n_qubits, kraus }
    }

    pub fn unitary(u: CMatrix) -> Self {
        let n = u.nrows().trailing_zeros() as usize;
        LocalChannel {
            n_qubits: n,
            kraus: vec![u],
        }
    }

    /// Kraus form of a linear map given on matrix units, via its Choi matrix.
    pub fn from_linear_map(n_qubits: usize, f: impl Fn(usize, usize) -> CMatrix) -> Self {
        let d = 1usize << n_qubits;
        let mut choi = CMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                let img = f(i, j);
                for a in 0..d {
                    for b in 0..d {
                        choi[(i * d + a, j * d + b)] = img[(a, b)];
                    }
                }
            }
        }
        let eig = SymmetricEigen::new(hermitian_part(&choi));
        let scale = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let mut kraus = Vec::new();
        for (k, lam) in eig.eigenvalues.iter().enumerate() {
            if *lam <= 1e-13 * scale.max(1.0) {
                continue;
            }
            let v = eig.eigenvectors.column(k);
            let s = lam.sqrt();
            kraus.push(CMatrix::from_fn(d, d, |a, i| v[i * d + a] * s));
        }
        LocalChannel { n_qubits, kraus }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
        for k in &self.kraus {
            out += k * rho * k.adjoint();
        }
        out
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &LocalChannel) -> LocalChannel {
        let mut kraus = Vec::with_capacity(self.kraus.len() * first.kraus.len());
        for b in &self.kraus {
            for a in &first.kraus {
                kraus.push(b * a);
            }
        }
        LocalChannel {
            n_qubits: self.n_qubits,
            kraus,
        }
    }
}

/// Density matrix over named two-level qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct Register {
    labels: Vec<String>,
    rho: CMatrix,
}

impl Register {
    pub fn ground(labels: &[&str]) -> Self {
        let d = 1usize << labels.len();
        Register {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            rho: unit(d, 0, 0),
        }
    }

    pub fn network() -> Self {
        Register::ground(&REGISTER)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| PipelineError::NotInRegister(label.to_string()))
    }

    /// Overwrite the sub-register `sites`, assumed in `|g…g⟩`, with `state`.
    pub fn load(&mut self, sites: &[&str], state: &CMatrix) -> Result<()> {
        let pos: Vec<usize> = sites.iter().map(|s| self.position(s)).collect::<Result<_>>()?;
        let n = self.labels.len();
        let k = sites.len();
        // replacement channel; exact when the sub-register is in |g…g⟩
        let ch = LocalChannel::from_linear_map(k, |i, j| {
            if i == j {
                state.clone()
            } else {
                CMatrix::zeros(1 << k, 1 << k)
            }
        });
        let kraus: Vec<CMatrix> = ch.kraus().iter().map(|a| embed_local(a, &pos, n)).collect();
        let mut out = CMatrix::zeros(self.rho.nrows(), self.rho.ncols());
        for kk in &kraus {
            out += kk * &self.rho * kk.adjoint();
        }
        self.rho = out;
        Ok(())
    }

    pub fn apply(&mut self, channel: &LocalChannel, sites: &[&str]) -> Result<()> {
        let pos: Vec<usize> = sites.iter().map(|s| self.position(s)).collect::<Result<_>>()?;
        let n = self.labels.len();
        let mut out = CMatrix::zeros(self.rho.nrows(), self.rho.ncols());
        for k in channel.kraus() {
            let full = embed_local(k, &pos, n);
            out += &full * &self.rho * full.adjoint();
        }
        self.rho = out;
        Ok(())
    }

    pub fn space(&self) -> HilbertSpace {
        HilbertSpace::new(self.labels.iter().map(|l| Site::qubit(l.as_str())).collect()).expect("distinct qubit labels")
    }

    pub fn density(&self) -> Result<DensityMatrix> {
        Ok(DensityMatrix::new(self.space(), self.rho.clone())?)
    }

    /// Reduced state on `keep`, in register order.
    pub fn reduced(&self, keep: &[&str]) -> Result<CMatrix> {
        for k in keep {
            self.position(k)?;
        }
        let rho = DensityMatrix::new_unchecked(self.space(), self.rho.clone());
        Ok(partial_trace(&rho, keep)?.into_matrix())
    }

    /// Fidelity of the reduced state on `keep` to `(|g…g⟩ + |e…e⟩)/√2`.
    pub fn ghz_fidelity(&self, keep: &[&str]) -> Result<f64> {
        let r = self.reduced(keep)?;
        let v = ghz_vector(keep.len());
        Ok((v.adjoint() * r * v)[(0, 0)].re)
    }
}

fn rz(theta: f64) -> CMatrix {
    rotation(Axis::Z, theta, 0.0)
}

fn cz_matrix() -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0), c(1.0), c(1.0), c(-1.0)]))
}

/// State on `(src, dst)` is replaced by the images of the source's matrix
/// units; `dst` must start in `|g⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMap {
    pub src: String,
    pub dst: String,
    /// The source keeps half of the excitation and stays entangled with `dst`.
    pub half: bool,
    /// `units[i][j]` is the 4×4 image on `(src, dst)` of `|i⟩⟨j|` on `src`.
    units: [[CMatrix; 2]; 2],
    /// `Z` angle on `dst` applied after the raw map.
    pub phase_correction: f64,
}

impl TransferMap {
    /// Perfect move, or a perfect `|e⟩ → (|eg⟩ + |ge⟩)/√2` split when `half`.
    pub fn ideal(src: &str, dst: &str, half: bool) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (g, e) = if half {
            (
                CVector::from_vec(vec![c(1.0), c(0.0), c(0.0), c(0.0)]),
                CVector::from_vec(vec![c(0.0), c(h), c(h), c(0.0)]),
            )
        } else {
            (
                CVector::from_vec(vec![c(1.0), c(0.0), c(0.0), c(0.0)]),
                CVector::from_vec(vec![c(0.0), c(1.0), c(0.0), c(0.0)]),
            )
        };
        let kets = [g, e];
        let units = std::array::from_fn(|i| std::array::from_fn(|j| &kets[i] * kets[j].adjoint()));
        TransferMap {
            src: src.to_string(),
            dst: dst.to_string(),
            half,
            units,
            phase_correction: 0.0,
        }
    }

    /// Build from the `(src, dst)` outputs for source inputs
    /// `|g⟩, |e⟩, (|g⟩+|e⟩)/√2, (|g⟩−i|e⟩)/√2`, then calibrate the `dst` phase.
    pub fn from_outputs(src: &str, dst: &str, half: bool, outs: [CMatrix; 4]) -> Self {
        let [og, oe, op, om] = outs;
        let s = &op * c(2.0) - &og - &oe;
        let t = &om * c(2.0) - &og - &oe;
        let ge = (&s - &t * C64::new(0.0, 1.0)) * c(0.5);
        let eg = (&s + &t * C64::new(0.0, 1.0)) * c(0.5);
        let units = if half {
            [[og, ge], [eg, oe]]
        } else {
            let reset = |m: &CMatrix| {
                let mut r = CMatrix::zeros(4, 4);
                for a in 0..2 {
                    for b in 0..2 {
                        r[(a, b)] = m[(a, b)] + m[(a + 2, b + 2)];
                    }
                }
                r
            };
            [[reset(&og), reset(&ge)], [reset(&eg), reset(&oe)]]
        };
        let mut map = TransferMap {
            src: src.to_string(),
            dst: dst.to_string(),
            half,
            units,
            phase_correction: 0.0,
        };
        map.phase_correction = if half {
            // ⟨eg|ρ|ge⟩ real positive for input |e⟩
            map.units[1][1][(2, 1)].arg()
        } else {
            -map.units[1][0][(1, 0)].arg()
        };
        map
    }

    fn corrected_unit(&self, i: usize, j: usize) -> CMatrix {
        let u = kron(&CMatrix::identity(2, 2), &rz(self.phase_correction));
        &u * &self.units[i][j] * u.adjoint()
    }

    /// Image of a source density matrix on `(src, dst)`.
    pub fn output_pair(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                out += self.corrected_unit(i, j) * rho[(i, j)];
            }
        }
        out
    }

    /// Image on `dst` alone.
    pub fn output_dst(&self, rho: &CMatrix) -> CMatrix {
        let p = self.output_pair(rho);
        CMatrix::from_fn(2, 2, |a, b| p[(a, b)] + p[(a + 2, b + 2)])
    }

    /// Two-qubit channel on `(src, dst)`; the input `dst` is traced out.
    pub fn channel(&self) -> LocalChannel {
        let units: Vec<Vec<CMatrix>> = (0..2)
            .map(|i| (0..2).map(|j| self.corrected_unit(i, j)).collect())
            .collect();
        LocalChannel::from_linear_map(2, |r, s| {
            let (ia, ib) = (r >> 1, r & 1);
            let (ja, jb) = (s >> 1, s & 1);
            if ib == jb {
                units[ia][ja].clone()
            } else {
                CMatrix::zeros(4, 4)
            }
        })
    }

    /// Excitation reaching `dst` from `|e⟩`.
    pub fn efficiency(&self) -> f64 {
        let o = self.output_dst(&unit(2, 1, 1));
        o[(1, 1)].re
    }

    /// `|⟨e|E(|e⟩⟨g|)|g⟩|` on `dst`.
    pub fn coherence(&self) -> f64 {
        self.output_dst(&unit(2, 1, 0))[(1, 0)].norm()
    }

    /// Single-qubit process from `src` to `dst`.
    pub fn process(&self) -> Result<ProcessMatrix> {
        let ins: Vec<CMatrix> = process_input_states(1)?.iter().map(|v| v * v.adjoint()).collect();
        let outs: Vec<CMatrix> = ins.iter().map(|r| self.output_dst(r)).collect();
        Ok(reconstruct_process(&ins, &outs)?)
    }

    pub fn process_fidelity(&self) -> Result<f64> {
        Ok(process_fidelity(&self.process()?, &ProcessMatrix::identity(1)?)?)
    }

    /// Fidelity to `(|gg⟩ + |ee⟩)/√2` after `X` on `dst`, from `src` in `|e⟩`.
    pub fn bell_fidelity(&self) -> f64 {
        let p = self.output_pair(&unit(2, 1, 1));
        let x = kron(&CMatrix::identity(2, 2), &rotation(Axis::X, PI, 0.0));
        let r = &x * p * x.adjoint();
        let v = ghz_vector(2);
        (v.adjoint() * r * v)[(0, 0)].re
    }
}

fn source_inputs() -> [CVector; 4] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [
        CVector::from_vec(vec![c(1.0), c(0.0)]),
        CVector::from_vec(vec![c(0.0), c(1.0)]),
        CVector::from_vec(vec![c(h), c(h)]),
        CVector::from_vec(vec![c(h), C64::new(0.0, -h)]),
    ]
}

/// Superposition `a|g…⟩ + b|e on site⟩` in `space`.
fn single_site_state(space: &HilbertSpace, site: &str, amp: &CVector) -> Result<CVector> {
    let g = space.basis_vector(&[])?;
    let e = space.basis_vector(&[(site, 1)])?;
    Ok(g * amp[0] + e * amp[1])
}

fn run_source_inputs(
    space: &HilbertSpace,
    src: &str,
    dst: &str,
    schedule: &PulseSchedule,
    device: &DeviceConfig,
    options: &EvolveOptions,
) -> Result<[CMatrix; 4]> {
    let mut outs: Vec<CMatrix> = Vec::with_capacity(4);
    for amp in source_inputs() {
        let psi = single_site_state(space, src, &amp)?;
        let rho0 = DensityMatrix::from_pure(space.clone(), &psi)?;
        let fin = evolve_final(&rho0, schedule, device, options)?;
        outs.push(qubit_block(&partial_trace(&fin, &[src, dst])?));
    }
    Ok(outs.try_into().expect("four inputs"))
}

/// Hilbert space of a cable transfer: both cable qubits and all standing
/// modes in the single-excitation sector.
pub fn transfer_space(device: &DeviceConfig) -> Result<HilbertSpace> {
    let mut sites = vec![Site::qubit(Node::A.qubit(2))];
    sites.extend((1..=device.mode_count).map(|m| Site::mode(mode_label(m), 1)));
    sites.push(Site::qubit(Node::B.qubit(2)));
    Ok(HilbertSpace::with_max_excitations(sites, 1)?)
}

pub fn simulate_cable_transfer(
    params: &TransferParams,
    half: bool,
    device: &DeviceConfig,
    options: &EvolveOptions,
) -> Result<TransferMap> {
    let space = transfer_space(device)?;
    let schedule = schedule_state_transfer(params, device)?;
    let (a, b) = (Node::A.qubit(2), Node::B.qubit(2));
    let outs = run_source_inputs(&space, &a, &b, &schedule, device, options)?;
    Ok(TransferMap::from_outputs(&a, &b, half, outs))
}

/// iSWAP moving `from` onto `to`, one of them the node's `Q2`.
pub fn simulate_iswap(from: &str, to: &str, device: &DeviceConfig, options: &EvolveOptions) -> Result<TransferMap> {
    let (node, j) = iswap_edge(from, to)?;
    let schedule = schedule_iswap(node, j, device)?;
    let space = HilbertSpace::new(vec![Site::qubit(from), Site::qubit(to)])?;
    let outs = run_source_inputs(&space, from, to, &schedule, device, options)?;
    Ok(TransferMap::from_outputs(from, to, false, outs))
}

fn iswap_edge(from: &str, to: &str) -> Result<(Node, u8)> {
    let parse =
        |s: &str| crate::dynamics::parse_qubit_label(s).ok_or_else(|| PipelineError::NotInRegister(s.to_string()));
    let (jf, nf) = parse(from)?;
    let (jt, nt) = parse(to)?;
    let bad = || PipelineError::Protocol(ProtocolError::Schedule(format!("no iSWAP between {from} and {to}")));
    if nf != nt {
        return Err(bad());
    }
    match (jf, jt) {
        (2, j) | (j, 2) if j == 1 || j == 3 => Ok((nf, j)),
        _ => Err(bad()),
    }
}

/// Result of tuning the `Z` corrections of one CZ frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CzCalibration {
    pub node: Node,
    pub j: u8,
    pub correction: CzCorrection,
    /// `arg(U_ee U_gg / (U_eg U_ge))` before correction.
    pub conditional_phase: f64,
    /// Phases of `gg, ge, eg, ee` on `(Qj, Q2)` after correction, relative to `gg`.
    pub corrected_phases: [f64; 4],
    /// `|U_xx|²` for the same states.
    pub return_probabilities: [f64; 4],
}

impl CzCalibration {
    /// Largest deviation of the corrected diagonal phases from `(0, 0, 0, π)`.
    pub fn phase_error(&self) -> f64 {
        let target = [0.0, 0.0, 0.0, PI];
        self.corrected_phases
            .iter()
            .zip(target)
            .map(|(p, t)| crate::protocols::wrap_phase(p - t).abs())
            .fold(0.0, f64::max)
    }
}

/// Space for CZ simulation on `node`: edge qubit, qutrit `Q2`, and the
/// spectator when requested.
pub fn cz_space(node: Node, j: u8, with_spectator: bool) -> Result<HilbertSpace> {
    let mut sites = vec![Site::qubit(node.qubit(j)), Site::qutrit(node.qubit(2))];
    if with_spectator {
        sites.push(Site::qubit(node.qubit(4 - j)));
    }
    Ok(HilbertSpace::new(sites)?)
}

/// Lossless calibration of the local `Z` corrections of the CZ on `(Qj, Q2)`,
/// optionally with the detuned spectator present.
pub fn calibrate_cz(
    node: Node,
    j: u8,
    device: &DeviceConfig,
    dt_max: f64,
    with_spectator: bool,
) -> Result<CzCalibration> {
    let space = cz_space(node, j, with_spectator)?;
    let schedule = schedule_cz(node, j, device, &space)?;
    let options = EvolveOptions {
        dt_max,
        sample_stride: 0,
        noise: NoiseOverrides::lossless(),
    };
    let (qj, q2, qs) = (node.qubit(j), node.qubit(2), node.qubit(4 - j));
    let g = space.basis_vector(&[])?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let overlap = |excited: &[(&str, usize)]| -> Result<C64> {
        let x = space.basis_vector(excited)?;
        let psi = (&g + &x) * c(h);
        let rho0 = DensityMatrix::from_pure(space.clone(), &psi)?;
        let fin = evolve_final(&rho0, &schedule, device, &options)?;
        // ρ_{x,g} = U_xx U_gg* / 2 when the states stay in place
        let xi = (0..space.dim()).find(|&i| x[i].norm() > 0.5).expect("basis state");
        Ok(fin.matrix()[(xi, 0)] * c(2.0))
    };
    let u_j = overlap(&[(qj.as_str(), 1)])?;
    let u_2 = overlap(&[(q2.as_str(), 1)])?;
    let u_s = if with_spectator {
        overlap(&[(qs.as_str(), 1)])?
    } else {
        C64::new(1.0, 0.0)
    };
    let u_ee = overlap(&[(qj.as_str(), 1), (q2.as_str(), 1)])?;
    let conditional = crate::protocols::wrap_phase(u_ee.arg() - u_j.arg() - u_2.arg());
    let correction = CzCorrection {
        edge: -u_j.arg(),
        center: -u_2.arg(),
        spectator: -u_s.arg(),
    };
    // Rz(θ) adds θ to the relative phase of |e⟩
    let wrap = crate::protocols::wrap_phase;
    let corrected = [
        0.0,
        wrap(u_2.arg() + correction.center),
        wrap(u_j.arg() + correction.edge),
        wrap(u_ee.arg() + correction.edge + correction.center),
    ];
    Ok(CzCalibration {
        node,
        j,
        correction,
        conditional_phase: conditional,
        corrected_phases: corrected,
        return_probabilities: [1.0, u_2.norm_sqr(), u_j.norm_sqr(), u_ee.norm_sqr()],
    })
}

fn calibrated_cz_schedule(cal: &CzCalibration, device: &DeviceConfig, space: &HilbertSpace) -> Result<PulseSchedule> {
    let s = schedule_cz(cal.node, cal.j, device, space)?;
    let mut items = s.items().to_vec();
    let sites = [
        (cal.node.qubit(cal.j), cal.correction.edge),
        (cal.node.qubit(2), cal.correction.center),
        (cal.node.qubit(4 - cal.j), cal.correction.spectator),
    ];
    for (site, th) in sites {
        if th == 0.0 || !space.contains(&site) {
            continue;
        }
        items.push(ScheduleItem::Gate(InstantGate::new(
            &site,
            Axis::Z,
            crate::protocols::wrap_phase(th),
        )));
    }
    Ok(PulseSchedule::new(items)?)
}

/// The `{g, e}` block of each site as a full `2^k` matrix; states cut by an
/// excitation cap read as zero.
fn qubit_block(rho: &DensityMatrix) -> CMatrix {
    let space = rho.space();
    let k = space.sites().len();
    let d = 1usize << k;
    let idx: Vec<Option<usize>> = (0..d)
        .map(|b| {
            let lv: Vec<usize> = (0..k).map(|q| (b >> (k - 1 - q)) & 1).collect();
            space.index_of(&lv)
        })
        .collect();
    CMatrix::from_fn(d, d, |i, j| match (idx[i], idx[j]) {
        (Some(a), Some(b)) => rho.matrix()[(a, b)],
        _ => c(0.0),
    })
}

fn lift_to_space(space: &HilbertSpace, psi: &CVector) -> CVector {
    let k = space.sites().len();
    let mut out = CVector::zeros(space.dim());
    for (b, a) in psi.iter().enumerate() {
        let lv: Vec<usize> = (0..k).map(|q| (b >> (k - 1 - q)) & 1).collect();
        out[space.index_of(&lv).expect("qubit levels present")] = *a;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CzProcess {
    pub calibration: CzCalibration,
    pub chi: ProcessMatrix,
    pub fidelity: f64,
    /// Largest population left outside the qubit subspace over all inputs.
    pub leakage: f64,
}

/// Process tomography of the calibrated CZ on `(Qj, Q2)` with decoherence.
pub fn simulate_cz_process(node: Node, j: u8, device: &DeviceConfig, options: &EvolveOptions) -> Result<CzProcess> {
    let cal = calibrate_cz(node, j, device, options.dt_max, false)?;
    let space = cz_space(node, j, false)?;
    let schedule = calibrated_cz_schedule(&cal, device, &space)?;
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    let mut leakage: f64 = 0.0;
    for psi in process_input_states(2)? {
        let full = lift_to_space(&space, &psi);
        let rho0 = DensityMatrix::from_pure(space.clone(), &full)?;
        let fin = evolve_final(&rho0, &schedule, device, options)?;
        let block = qubit_block(&fin);
        leakage = leakage.max(fin.trace() - block.trace().re);
        ins.push(&psi * psi.adjoint());
        outs.push(block);
    }
    let chi = reconstruct_process(&ins, &outs)?;
    let fidelity = process_fidelity(&chi, &ProcessMatrix::from_unitary(&cz_matrix())?)?;
    Ok(CzProcess {
        calibration: cal,
        chi,
        fidelity,
        leakage,
    })
}

/// Pulse-level GHZ preparation on one node with calibrated CZs.
pub fn simulate_ghz_prep_pulse(node: Node, device: &DeviceConfig, options: &EvolveOptions) -> Result<f64> {
    let mut corrections = BTreeMap::new();
    for j in [1u8, 3] {
        corrections.insert(j, calibrate_cz(node, j, device, options.dt_max, true)?.correction);
    }
    let space = HilbertSpace::new(vec![
        Site::qubit(node.qubit(1)),
        Site::qutrit(node.qubit(2)),
        Site::qubit(node.qubit(3)),
    ])?;
    let schedule = schedule_ghz_prep(node, device, &space, &corrections)?;
    let fin = evolve_final(&DensityMatrix::ground(&space), &schedule, device, options)?;
    let block = qubit_block(&fin);
    let v = ghz_vector(3);
    Ok((v.adjoint() * block * v)[(0, 0)].re)
}

/// Two-qubit depolarized CZ with process fidelity `f`.
pub fn cz_proxy_channel(f: f64) -> LocalChannel {
    let p = ((1.0 - f) * 16.0 / 15.0).clamp(0.0, 1.0);
    let cz = cz_matrix();
    let mut kraus = vec![&cz * c((1.0 - p).sqrt())];
    if p > 0.0 {
        let paulis = pauli_matrices(2).expect("two qubits");
        for pm in paulis {
            kraus.push(&pm * &cz * c((p / 16.0).sqrt()));
        }
    }
    LocalChannel::from_kraus(2, kraus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CzModel {
    Ideal,
    Proxy,
}

/// How each step kind is modelled when executed on a register.
#[derive(Debug, Clone)]
pub struct StepModels {
    pub cz: CzModel,
    pub idle: bool,
    pub st: Option<TransferMap>,
    pub st_half: Option<TransferMap>,
    pub iswaps: BTreeMap<(String, String), TransferMap>,
}

impl StepModels {
    pub fn ideal() -> Self {
        StepModels {
            cz: CzModel::Ideal,
            idle: false,
            st: None,
            st_half: None,
            iswaps: BTreeMap::new(),
        }
    }

    /// Simulated transfers and iSWAPs for every one appearing in `steps`,
    /// CZ proxy and idle decoherence.
    pub fn simulated(steps: &[ProtocolStep], device: &DeviceConfig, options: &EvolveOptions) -> Result<Self> {
        let mut m = StepModels {
            cz: CzModel::Proxy,
            idle: true,
            ..StepModels::ideal()
        };
        let mut pending = steps.to_vec();
        while let Some(s) = pending.pop() {
            match s {
                ProtocolStep::StateTransfer { half: false } if m.st.is_none() => {
                    m.st = Some(simulate_cable_transfer(&TransferParams::st(), false, device, options)?);
                }
                ProtocolStep::StateTransfer { half: true } if m.st_half.is_none() => {
                    m.st_half = Some(simulate_cable_transfer(
                        &TransferParams::st_half(),
                        true,
                        device,
                        options,
                    )?);
                }
                ProtocolStep::Iswap { from, to } => {
                    let key = (from.clone(), to.clone());
                    if let std::collections::btree_map::Entry::Vacant(e) = m.iswaps.entry(key) {
                        e.insert(simulate_iswap(&from, &to, device, options)?);
                    }
                }
                ProtocolStep::Parallel { steps: v } | ProtocolStep::Sequence { steps: v } => pending.extend(v),
                _ => {}
            }
        }
        Ok(m)
    }
}

/// Apply `steps` in order; children of a parallel step act on disjoint qubits.
pub fn execute(
    register: &mut Register,
    steps: &[ProtocolStep],
    models: &StepModels,
    device: &DeviceConfig,
) -> Result<()> {
    for s in steps {
        execute_step(register, s, models, device)?;
    }
    Ok(())
}

fn execute_step(reg: &mut Register, step: &ProtocolStep, models: &StepModels, device: &DeviceConfig) -> Result<()> {
    match step {
        ProtocolStep::Rotation {
            site,
            axis,
            angle,
            phase,
        } => reg.apply(&LocalChannel::unitary(rotation(*axis, *angle, *phase)), &[site]),
        ProtocolStep::Cz { node, j } => {
            let (edge, center) = (node.qubit(*j), node.qubit(2));
            let ch = match models.cz {
                CzModel::Ideal => LocalChannel::unitary(cz_matrix()),
                CzModel::Proxy => cz_proxy_channel(device.cz_fidelity(&center, &edge)),
            };
            reg.apply(&ch, &[&center, &edge])
        }
        ProtocolStep::Iswap { from, to } => {
            let map = models
                .iswaps
                .get(&(from.clone(), to.clone()))
                .cloned()
                .unwrap_or_else(|| TransferMap::ideal(from, to, false));
            reg.apply(&map.channel(), &[from, to])
        }
        ProtocolStep::StateTransfer { half } => {
            let (a, b) = (Node::A.qubit(2), Node::B.qubit(2));
            let model = if *half { &models.st_half } else { &models.st };
            let map = model.clone().unwrap_or_else(|| TransferMap::ideal(&a, &b, *half));
            reg.apply(&map.channel(), &[&a, &b])
        }
        ProtocolStep::Idle { sites, duration } => {
            if !models.idle {
                return Ok(());
            }
            for s in sites {
                let q = device.qubit(s)?;
                let ch = LocalChannel::from_kraus(1, idle_kraus(*duration, q.t1_s, q.t_phi_s));
                reg.apply(&ch, &[s])?;
            }
            Ok(())
        }
        ProtocolStep::Parallel { steps: v } | ProtocolStep::Sequence { steps: v } => execute(reg, v, models, device),
    }
}

/// Node-A GHZ state from the gate-level preparation.
pub fn ghz_prep_register(models: &StepModels, device: &DeviceConfig) -> Result<Register> {
    let mut reg = Register::network();
    execute(&mut reg, &crate::protocols::ghz_prep_steps(Node::A), models, device)?;
    Ok(reg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhzPipelineResult {
    pub prep_fidelity: f64,
    pub transfer_fidelity: f64,
}

/// GHZ preparation on node A followed by the sequential transfer to node B.
pub fn ghz_pipeline(prep: &StepModels, transfer: &StepModels, device: &DeviceConfig) -> Result<GhzPipelineResult> {
    let mut reg = ghz_prep_register(prep, device)?;
    let prep_fidelity = reg.ghz_fidelity(&REGISTER[..3])?;
    execute(
        &mut reg,
        &crate::protocols::schedule_ghz_transfer(device),
        transfer,
        device,
    )?;
    Ok(GhzPipelineResult {
        prep_fidelity,
        transfer_fidelity: reg.ghz_fidelity(&REGISTER[3..])?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkResult {
    /// Bell pair on the cable qubits after step I.
    pub bell: f64,
    /// Four-qubit GHZ after step II.
    pub ghz4: f64,
    /// Six-qubit GHZ after step III.
    pub ghz6: f64,
}

pub fn network_pipeline(models: &StepModels, device: &DeviceConfig) -> Result<NetworkResult> {
    let [s1, s2, s3] = crate::protocols::schedule_network_ghz(device);
    let mut reg = Register::network();
    execute(&mut reg, &s1, models, device)?;
    let bell = reg.ghz_fidelity(&["Q2A", "Q2B"])?;
    execute(&mut reg, &s2, models, device)?;
    let ghz4 = reg.ghz_fidelity(&["Q1A", "Q2A", "Q1B", "Q2B"])?;
    execute(&mut reg, &s3, models, device)?;
    Ok(NetworkResult {
        bell,
        ghz4,
        ghz6: reg.ghz_fidelity(&REGISTER)?,
    })
}

/// All network steps flattened, for building [`StepModels::simulated`].
pub fn network_steps(device: &DeviceConfig) -> Vec<ProtocolStep> {
    crate::protocols::schedule_network_ghz(device)
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::max_abs;
    use approx::assert_abs_diff_eq;

    #[test]
    fn embed_matches_kron() {
        let x = crate::hilbert::pauli_x();
        let z = crate::hilbert::pauli_z();
        let e = embed_local(&kron(&x, &z), &[0, 2], 3);
        let want = kron(&kron(&x, &CMatrix::identity(2, 2)), &z);
        assert!(max_abs(&(e - want)) < 1e-15);
        let e = embed_local(&kron(&x, &z), &[2, 0], 3);
        let want = kron(&kron(&z, &CMatrix::identity(2, 2)), &x);
        assert!(max_abs(&(e - want)) < 1e-15);
    }

    #[test]
    fn choi_kraus_reproduces_map() {
        let ks = idle_kraus(1e-6, 7e-6, 3.8e-6);
        let direct = LocalChannel::from_kraus(1, ks.clone());
        let via = LocalChannel::from_linear_map(1, |i, j| direct.apply(&unit(2, i, j)));
        let rho = CMatrix::from_element(2, 2, c(0.5));
        assert!(max_abs(&(direct.apply(&rho) - via.apply(&rho))) < 1e-14);
    }

    #[test]
    fn ideal_cnot_truth_table() {
        let dev = DeviceConfig::default();
        for input in 0..4usize {
            let mut reg = Register::ground(&["Q1A", "Q2A"]);
            if input & 2 != 0 {
                reg.apply(&LocalChannel::unitary(rotation(Axis::X, PI, 0.0)), &["Q2A"])
                    .unwrap();
            }
            if input & 1 != 0 {
                reg.apply(&LocalChannel::unitary(rotation(Axis::X, PI, 0.0)), &["Q1A"])
                    .unwrap();
            }
            execute(&mut reg, &[ProtocolStep::cnot(Node::A, 1)], &StepModels::ideal(), &dev).unwrap();
            // control Q2A (second), target Q1A (first)
            let c2 = (input >> 1) & 1;
            let t = (input & 1) ^ c2;
            let want = (t << 1) | c2;
            assert!((reg.matrix()[(want, want)].re - 1.0).abs() < 1e-6, "input {input}");
        }
    }

    #[test]
    fn ideal_protocols_are_perfect() {
        let dev = DeviceConfig::default();
        let m = StepModels::ideal();
        let g = ghz_pipeline(&m, &m, &dev).unwrap();
        assert_abs_diff_eq!(g.prep_fidelity, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g.transfer_fidelity, 1.0, epsilon = 1e-6);
        let n = network_pipeline(&m, &dev).unwrap();
        assert_abs_diff_eq!(n.bell, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(n.ghz4, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(n.ghz6, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn proxy_has_requested_fidelity() {
        let ch = cz_proxy_channel(0.958);
        let ins: Vec<CMatrix> = process_input_states(2)
            .unwrap()
            .iter()
            .map(|v| v * v.adjoint())
            .collect();
        let outs: Vec<CMatrix> = ins.iter().map(|r| ch.apply(r)).collect();
        let chi = reconstruct_process(&ins, &outs).unwrap();
        let f = process_fidelity(&chi, &ProcessMatrix::from_unitary(&cz_matrix()).unwrap()).unwrap();
        assert_abs_diff_eq!(f, 0.958, epsilon = 1e-9);
    }

    #[test]
    fn lossless_iswap_moves_excitation() {
        let mut dev = DeviceConfig::default();
        for q in dev.qubits.values_mut() {
            q.t1_s = f64::INFINITY;
            q.t_phi_s = f64::INFINITY;
        }
        let opts = EvolveOptions {
            noise: NoiseOverrides::lossless(),
            ..Default::default()
        };
        let m = simulate_iswap("Q1A", "Q2A", &dev, &opts).unwrap();
        assert_abs_diff_eq!(m.efficiency(), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.process_fidelity().unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn load_places_state() {
        let mut reg = Register::ground(&["Q1A", "Q2A", "Q3A"]);
        let v = ghz_vector(2);
        reg.load(&["Q1A", "Q3A"], &(&v * v.adjoint())).unwrap();
        assert_abs_diff_eq!(reg.ghz_fidelity(&["Q1A", "Q3A"]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(reg.reduced(&["Q2A"]).unwrap()[(0, 0)].re, 1.0, epsilon = 1e-12);
    }
}
