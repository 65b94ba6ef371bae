//! Simulated randomized benchmarking over the single-qubit Clifford group and
//! two-qubit cross-entropy benchmarking, each with an injected error channel.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::minimize_scalar;
use crate::dynamics::{idle_kraus, rotation, Axis};
use crate::hilbert::{kron, pauli_matrices, CMatrix, CVector, C64};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("invalid error channel: {0}")]
    InvalidChannel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("decay fit did not converge: {0}")]
    FitFailed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchmarkError>;

fn c(v: f64) -> C64 {
    C64::new(v, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generator {
    X2,
    MinusX2,
    Y2,
    MinusY2,
    X,
    Y,
    W2,
    MinusW2,
}

impl Generator {
    pub const CLIFFORD: [Generator; 6] = [
        Generator::X2,
        Generator::MinusX2,
        Generator::Y2,
        Generator::MinusY2,
        Generator::X,
        Generator::Y,
    ];
    pub const XEB: [Generator; 6] = [
        Generator::X2,
        Generator::MinusX2,
        Generator::Y2,
        Generator::MinusY2,
        Generator::W2,
        Generator::MinusW2,
    ];

    pub fn unitary(self) -> CMatrix {
        let h = PI / 2.0;
        match self {
            Generator::X2 => rotation(Axis::X, h, 0.0),
            Generator::MinusX2 => rotation(Axis::X, -h, 0.0),
            Generator::Y2 => rotation(Axis::Y, h, 0.0),
            Generator::MinusY2 => rotation(Axis::Y, -h, 0.0),
            Generator::X => rotation(Axis::X, PI, 0.0),
            Generator::Y => rotation(Axis::Y, PI, 0.0),
            Generator::W2 => rotation(Axis::X, h, PI / 4.0),
            Generator::MinusW2 => rotation(Axis::X, -h, PI / 4.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliffordElement {
    pub index: usize,
    pub unitary: CMatrix,
    /// Generators in time order.
    pub decomposition: Vec<Generator>,
}

/// Phase-free key of a 2×2 unitary.
fn phase_key(u: &CMatrix) -> [i64; 8] {
    let pivot = u.iter().find(|z| z.norm() > 1e-6).copied().unwrap_or(c(1.0));
    let ph = pivot.conj() / pivot.norm();
    let mut k = [0i64; 8];
    for (i, z) in u.iter().enumerate() {
        let w = z * ph;
        k[2 * i] = (w.re * 1e6).round() as i64;
        k[2 * i + 1] = (w.im * 1e6).round() as i64;
    }
    k
}

/// Single-qubit Clifford group with multiplication and inverse tables.
#[derive(Debug, Clone)]
pub struct CliffordGroup {
    elements: Vec<CliffordElement>,
    index: HashMap<[i64; 8], usize>,
    product: Vec<Vec<usize>>,
    inverse: Vec<usize>,
}

impl CliffordGroup {
    /// Breadth-first closure of `generators`, giving shortest decompositions.
    pub fn generate(generators: &[Generator]) -> Self {
        let id = CMatrix::identity(2, 2);
        let mut elements = vec![CliffordElement {
            index: 0,
            unitary: id.clone(),
            decomposition: Vec::new(),
        }];
        let mut index = HashMap::new();
        index.insert(phase_key(&id), 0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for g in generators {
                let u = g.unitary() * &elements[i].unitary;
                let key = phase_key(&u);
                if index.contains_key(&key) {
                    continue;
                }
                let n = elements.len();
                let mut dec = elements[i].decomposition.clone();
                dec.push(*g);
                elements.push(CliffordElement {
                    index: n,
                    unitary: u,
                    decomposition: dec,
                });
                index.insert(key, n);
                queue.push_back(n);
            }
        }
        let n = elements.len();
        let mut product = vec![vec![0; n]; n];
        let mut inverse = vec![0; n];
        for a in 0..n {
            for b in 0..n {
                // b after a
                let u = &elements[b].unitary * &elements[a].unitary;
                product[a][b] = index[&phase_key(&u)];
                if product[a][b] == 0 {
                    inverse[a] = b;
                }
            }
        }
        CliffordGroup {
            elements,
            index,
            product,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[CliffordElement] {
        &self.elements
    }

    /// Index of `b · a` (apply `a` first).
    pub fn then(&self, a: usize, b: usize) -> usize {
        self.product[a][b]
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inverse[a]
    }

    pub fn lookup(&self, u: &CMatrix) -> Option<usize> {
        self.index.get(&phase_key(u)).copied()
    }
}

pub fn clifford_group_1q() -> CliffordGroup {
    CliffordGroup::generate(&Generator::CLIFFORD)
}

/// Noise injected after every Clifford (RB) or every cycle (XEB).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ErrorChannelSpec {
    None,
    /// `ρ → (1−λ)ρ + λ·I/d`.
    Depolarizing {
        strength: f64,
    },
    AmplitudeDamping {
        gamma: f64,
    },
    /// Relaxation and dephasing of each qubit over `duration_s`.
    FromLindblad {
        t1_s: f64,
        t_phi_s: f64,
        duration_s: f64,
    },
}

impl ErrorChannelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchmarkError::InvalidChannel(m.to_string()));
        match *self {
            ErrorChannelSpec::None => Ok(()),
            ErrorChannelSpec::Depolarizing { strength } if !(0.0..=1.0).contains(&strength) => {
                bad("depolarizing strength must lie in [0, 1]")
            }
            ErrorChannelSpec::AmplitudeDamping { gamma } if !(0.0..=1.0).contains(&gamma) => {
                bad("amplitude-damping gamma must lie in [0, 1]")
            }
            ErrorChannelSpec::FromLindblad {
                t1_s,
                t_phi_s,
                duration_s,
            } if !(t1_s > 0.0 && t_phi_s > 0.0 && duration_s >= 0.0) => {
                bad("lifetimes must be positive and duration non-negative")
            }
            _ => Ok(()),
        }
    }

    /// Kraus operators on `n` qubits; local channels act on every qubit.
    pub fn kraus(&self, n: usize) -> Result<Vec<CMatrix>> {
        self.validate()?;
        let d = 1usize << n;
        let local = |k1: Vec<CMatrix>| -> Vec<CMatrix> {
            let mut out = vec![CMatrix::identity(1, 1)];
            for _ in 0..n {
                out = out.iter().flat_map(|a| k1.iter().map(move |b| kron(a, b))).collect();
            }
            out
        };
        Ok(match *self {
            ErrorChannelSpec::None => vec![CMatrix::identity(d, d)],
            ErrorChannelSpec::Depolarizing { strength } => {
                let paulis = pauli_matrices(n).map_err(|e| BenchmarkError::InvalidChannel(e.to_string()))?;
                let dd = (d * d) as f64;
                paulis
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let w = if i == 0 {
                            1.0 - strength + strength / dd
                        } else {
                            strength / dd
                        };
                        p * c(w.sqrt())
                    })
                    .collect()
            }
            ErrorChannelSpec::AmplitudeDamping { gamma } => local(vec![
                CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c((1.0 - gamma).sqrt())]),
                CMatrix::from_row_slice(2, 2, &[c(0.0), c(gamma.sqrt()), c(0.0), c(0.0)]),
            ]),
            ErrorChannelSpec::FromLindblad {
                t1_s,
                t_phi_s,
                duration_s,
            } => local(idle_kraus(duration_s, t1_s, t_phi_s)),
        })
    }

    /// Polarization of the channel in an `n`-qubit space,
    /// `(d²·F_e − 1)/(d² − 1)` with `F_e` the entanglement fidelity.
    pub fn polarization(&self, n: usize) -> Result<f64> {
        let d = (1usize << n) as f64;
        let fe: f64 = self.kraus(n)?.iter().map(|k| (k.trace() / d).norm_sqr()).sum();
        Ok((d * d * fe - 1.0) / (d * d - 1.0))
    }
}

fn apply(kraus: &[CMatrix], rho: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
    for k in kraus {
        out += k * rho * k.adjoint();
    }
    out
}

/// Seed for item `index`, independent of evaluation order.
fn derived_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

/// Least-squares `A·p^x + B` (or `A·p^x` without offset) by variable
/// projection over `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub residual_norm: f64,
}

fn linear_part(xs: &[f64], ys: &[f64], p: f64, offset: bool) -> (f64, f64, f64) {
    let f: Vec<f64> = xs.iter().map(|x| p.powf(*x)).collect();
    let (a, b) = if offset {
        let n = xs.len() as f64;
        let (sf, sy) = (f.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sff: f64 = f.iter().map(|v| v * v).sum();
        let sfy: f64 = f.iter().zip(ys).map(|(a, b)| a * b).sum();
        let det = n * sff - sf * sf;
        if det.abs() < 1e-300 {
            (0.0, sy / n)
        } else {
            ((n * sfy - sf * sy) / det, (sff * sy - sf * sfy) / det)
        }
    } else {
        let sff: f64 = f.iter().map(|v| v * v).sum();
        let sfy: f64 = f.iter().zip(ys).map(|(a, b)| a * b).sum();
        (sfy / sff, 0.0)
    };
    let r: f64 = f.iter().zip(ys).map(|(fi, y)| (a * fi + b - y).powi(2)).sum();
    (a, b, r.sqrt())
}

pub fn fit_exponential_decay(xs: &[f64], ys: &[f64], offset: bool) -> Result<DecayFit> {
    let need = if offset { 3 } else { 2 };
    if xs.len() < need || xs.len() != ys.len() {
        return Err(BenchmarkError::FitFailed(format!(
            "need at least {need} points, got {}",
            xs.len()
        )));
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(BenchmarkError::FitFailed("non-finite data".into()));
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let spread = ys.iter().map(|y| (y - mean).abs()).fold(0.0, f64::max);
    let flat = if offset {
        spread < 1e-12
    } else {
        spread < 1e-12 && (mean - 1.0).abs() < 1e-12
    };
    if flat {
        let (a, b) = if offset { (0.5 * mean, 0.5 * mean) } else { (mean, 0.0) };
        return Ok(DecayFit {
            a,
            b,
            p: 1.0,
            residual_norm: 0.0,
        });
    }
    let (lo, hi) = (0.05, 1.0);
    let p = minimize_scalar(|p| linear_part(xs, ys, p, offset).2, lo, hi, 400);
    if !p.is_finite() || p <= lo + 1e-9 {
        return Err(BenchmarkError::FitFailed(format!("decay constant at bound ({p})")));
    }
    let (a, b, r) = linear_part(xs, ys, p, offset);
    Ok(DecayFit {
        a,
        b,
        p,
        residual_norm: r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub n_sequences: usize,
    pub error: ErrorChannelSpec,
    pub seed: u64,
    /// Finite-shot estimate of each return probability; exact when absent.
    #[serde(default)]
    pub shots: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub length: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbResult {
    pub points: Vec<DecayPoint>,
    /// Return probability per length, per sequence.
    pub sequence_fidelities: Vec<Vec<f64>>,
    pub fit: DecayFit,
    /// `(1 − p)/2`.
    pub error_per_clifford: f64,
    pub average_gate_fidelity: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Return probability of one random sequence of `m` Cliffords plus recovery.
pub fn rb_sequence<R: Rng>(group: &CliffordGroup, m: usize, kraus: &[CMatrix], rng: &mut R) -> (f64, Vec<usize>) {
    let mut rho = CMatrix::zeros(2, 2);
    rho[(0, 0)] = c(1.0);
    let mut total = 0usize;
    let mut seq = Vec::with_capacity(m + 1);
    for _ in 0..m {
        let k = rng.random_range(0..group.len());
        seq.push(k);
        total = group.then(total, k);
    }
    seq.push(group.inverse(total));
    for &k in &seq {
        let u = &group.elements()[k].unitary;
        rho = apply(kraus, &(u * &rho * u.adjoint()));
    }
    (rho[(0, 0)].re.clamp(0.0, 1.0), seq)
}

pub fn rb_run(config: &RbConfig) -> Result<RbResult> {
    rb_run_with(config, &clifford_group_1q())
}

pub fn rb_run_with(config: &RbConfig, group: &CliffordGroup) -> Result<RbResult> {
    if config.lengths.is_empty() || config.lengths.contains(&0) {
        return Err(BenchmarkError::InvalidConfig("lengths must be ≥ 1".into()));
    }
    if config.n_sequences < 10 {
        return Err(BenchmarkError::InvalidConfig("need at least 10 sequences".into()));
    }
    if config.shots == Some(0) {
        return Err(BenchmarkError::InvalidConfig("shots must be positive".into()));
    }
    let kraus = config.error.kraus(1)?;
    let n = config.n_sequences;
    let per_length: Vec<Vec<f64>> = config
        .lengths
        .iter()
        .enumerate()
        .map(|(li, &m)| {
            (0..n)
                .into_par_iter()
                .map(|s| {
                    let mut rng = derived_rng(config.seed, (li * n + s) as u64);
                    let (p, _) = rb_sequence(group, m, &kraus, &mut rng);
                    match config.shots {
                        Some(shots) => {
                            let k = Binomial::new(shots, p).expect("probability in range").sample(&mut rng);
                            k as f64 / shots as f64
                        }
                        None => p,
                    }
                })
                .collect()
        })
        .collect();
    let points: Vec<DecayPoint> = config
        .lengths
        .iter()
        .zip(&per_length)
        .map(|(&length, v)| {
            let (mean, std) = mean_std(v);
            DecayPoint { length, mean, std }
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.length as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let fit = fit_exponential_decay(&xs, &ys, true)?;
    let r = (1.0 - fit.p) / 2.0;
    Ok(RbResult {
        points,
        sequence_fidelities: per_length,
        fit,
        error_per_clifford: r,
        average_gate_fidelity: 1.0 - r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XebConfig {
    pub cycles: Vec<usize>,
    pub n_circuits: usize,
    /// Error after the CZ of every cycle, on both qubits.
    pub two_qubit_error: ErrorChannelSpec,
    /// Error after every single-qubit gate.
    #[serde(default = "no_error")]
    pub single_qubit_error: ErrorChannelSpec,
    pub seed: u64,
}

fn no_error() -> ErrorChannelSpec {
    ErrorChannelSpec::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XebResult {
    pub points: Vec<DecayPoint>,
    pub fit: DecayFit,
    /// `1 − p_cycle`.
    pub cycle_error: f64,
    /// Cycle error with the single-qubit layer's depolarization divided out.
    pub two_qubit_error_estimate: f64,
}

fn cz4() -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0), c(1.0), c(1.0), c(-1.0)]))
}

/// Linear XEB fidelity of one random circuit of `n` cycles, each a random
/// single-qubit layer then CZ, closed by a final single-qubit layer.
pub fn xeb_circuit<R: Rng>(n: usize, k1: &[CMatrix], k2: &[CMatrix], rng: &mut R) -> f64 {
    let layer = |rng: &mut R| {
        let a = Generator::XEB[rng.random_range(0..6)].unitary();
        let b = Generator::XEB[rng.random_range(0..6)].unitary();
        kron(&a, &b)
    };
    let mut psi = CVector::zeros(4);
    psi[0] = c(1.0);
    let mut rho = &psi * psi.adjoint();
    let cz = cz4();
    let local = |rho: &CMatrix| apply(k1, rho);
    for _ in 0..n {
        let u = layer(rng);
        psi = &u * psi;
        rho = local(&(&u * &rho * u.adjoint()));
        psi = &cz * psi;
        rho = apply(k2, &(&cz * &rho * &cz));
    }
    let u = layer(rng);
    psi = &u * psi;
    rho = local(&(&u * &rho * u.adjoint()));
    let ideal: Vec<f64> = psi.iter().map(|a| a.norm_sqr()).collect();
    let noisy: Vec<f64> = (0..4).map(|i| rho[(i, i)].re).collect();
    let d = 4.0;
    let num: f64 = ideal.iter().zip(&noisy).map(|(p, q)| p * q).sum::<f64>() - 1.0 / d;
    let den: f64 = ideal.iter().map(|p| p * p).sum::<f64>() - 1.0 / d;
    if den.abs() < 1e-12 {
        f64::NAN
    } else {
        num / den
    }
}

pub fn xeb_run(config: &XebConfig) -> Result<XebResult> {
    if config.n_circuits < 2 {
        return Err(BenchmarkError::InvalidConfig(
            "need at least 2 circuits per depth".into(),
        ));
    }
    if config.cycles.len() < 2 {
        return Err(BenchmarkError::InvalidConfig("need at least 2 depths".into()));
    }
    let k2 = config.two_qubit_error.kraus(2)?;
    let k1 = config.single_qubit_error.kraus(1)?;
    let k1_both: Vec<CMatrix> = k1.iter().flat_map(|a| k1.iter().map(move |b| kron(a, b))).collect();
    let n = config.n_circuits;
    let mut points = Vec::with_capacity(config.cycles.len());
    for (ci, &depth) in config.cycles.iter().enumerate() {
        let f: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|s| {
                let mut rng = derived_rng(config.seed, (ci * n + s) as u64);
                xeb_circuit(depth, &k1_both, &k2, &mut rng)
            })
            .collect();
        // circuits with a flat ideal distribution carry no information
        let f: Vec<f64> = f.into_iter().filter(|v| v.is_finite()).collect();
        if f.len() < 2 {
            return Err(BenchmarkError::InvalidConfig(format!(
                "too few informative circuits at depth {depth}"
            )));
        }
        let (mean, std) = mean_std(&f);
        points.push(DecayPoint {
            length: depth,
            mean,
            std,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.length as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let fit = fit_exponential_decay(&xs, &ys, false)?;
    // both single-qubit errors together, as a polarization of the pair
    let fe1 = (3.0 * config.single_qubit_error.polarization(1)? + 1.0) / 4.0;
    let layer = (16.0 * fe1 * fe1 - 1.0) / 15.0;
    Ok(XebResult {
        points,
        fit,
        cycle_error: 1.0 - fit.p,
        two_qubit_error_estimate: 1.0 - fit.p / layer,
    })
}

fn write_points<W: Write>(header: [&str; 3], points: &[DecayPoint], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let io = |e: csv::Error| BenchmarkError::Io(std::io::Error::other(e));
    wtr.write_record(header).map_err(io)?;
    for p in points {
        wtr.write_record([
            p.length.to_string(),
            format!("{:.12}", p.mean),
            format!("{:.12}", p.std),
        ])
        .map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_rb_csv<W: Write>(result: &RbResult, w: W) -> Result<()> {
    write_points(["length", "mean_return_prob", "std"], &result.points, w)
}

pub fn write_xeb_csv<W: Write>(result: &XebResult, w: W) -> Result<()> {
    write_points(["length", "mean_xeb_fidelity", "std"], &result.points, w)
}
