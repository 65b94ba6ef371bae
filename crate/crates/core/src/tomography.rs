//! Readout simulation with per-qubit confusion, readout-error mitigation and
//! linear-inversion state and process tomography.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rotation, Axis};
use crate::hilbert::{
    hermitian_part, kron, pauli_matrices, project_to_physical, CMatrix, CVector, DensityMatrix, HilbertError,
    HilbertSpace, ProcessMatrix, C64,
};

pub const MATRIX_SCHEMA_VERSION: u32 = 1;
pub const LEAKAGE_LIMIT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum TomographyError {
    #[error("readout fidelities F_g = {fg}, F_e = {fe} must both exceed 0.5")]
    Singular { fg: f64, fe: f64 },
    #[error("population {0:e} outside the qubit subspace exceeds the leakage limit")]
    Leakage(f64),
    #[error("shot count must be positive")]
    NoShots,
    #[error("expected {expected} settings, got {actual}")]
    IncompleteSettings { expected: usize, actual: usize },
    #[error("setting {setting}: counts sum to {sum}, record says {shots}")]
    InconsistentShots { setting: usize, sum: u64, shots: u64 },
    #[error("{expected} confusion matrices needed, got {actual}")]
    ConfusionCount { expected: usize, actual: usize },
    #[error("input states do not span the operator space (rank {rank} of {needed})")]
    RankDeficient { rank: usize, needed: usize },
    #[error("unsupported qubit count {0}")]
    Unsupported(usize),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TomographyError>;

/// Per-qubit readout map from true to observed outcome, column-stochastic:
/// `[[F_g, 1−F_e], [1−F_g, F_e]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub fg: f64,
    pub fe: f64,
}

impl ConfusionMatrix {
    pub fn new(fg: f64, fe: f64) -> Result<Self> {
        if !(fg > 0.5 && fg <= 1.0 && fe > 0.5 && fe <= 1.0) {
            return Err(TomographyError::Singular { fg, fe });
        }
        Ok(ConfusionMatrix { fg, fe })
    }

    pub fn ideal() -> Self {
        ConfusionMatrix { fg: 1.0, fe: 1.0 }
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.fg, 1.0 - self.fe], [1.0 - self.fg, self.fe]]
    }

    pub fn inverse(&self) -> [[f64; 2]; 2] {
        let [[a, b], [c, d]] = self.matrix();
        let det = a * d - b * c;
        [[d / det, -b / det], [-c / det, a / det]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PreRotation {
    I,
    X2,
    Y2,
}

impl PreRotation {
    pub const ALL: [PreRotation; 3] = [PreRotation::I, PreRotation::X2, PreRotation::Y2];

    pub fn unitary(self) -> CMatrix {
        match self {
            PreRotation::I => CMatrix::identity(2, 2),
            PreRotation::X2 => rotation(Axis::X, std::f64::consts::FRAC_PI_2, 0.0),
            PreRotation::Y2 => rotation(Axis::Y, std::f64::consts::FRAC_PI_2, 0.0),
        }
    }

    fn letter(self) -> char {
        match self {
            PreRotation::I => 'I',
            PreRotation::X2 => 'X',
            PreRotation::Y2 => 'Y',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TomographySetting(pub Vec<PreRotation>);

impl TomographySetting {
    /// `I`, `X` (for X/2) or `Y` (for Y/2) per qubit.
    pub fn label(&self) -> String {
        self.0.iter().map(|r| r.letter()).collect()
    }

    pub fn unitary(&self) -> CMatrix {
        self.0
            .iter()
            .fold(CMatrix::identity(1, 1), |acc, r| kron(&acc, &r.unitary()))
    }
}

/// All `3^k` settings, first qubit varying slowest.
pub fn all_settings(k: usize) -> Vec<TomographySetting> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|s| {
                PreRotation::ALL.iter().map(move |r| {
                    let mut t = s.clone();
                    t.push(*r);
                    t
                })
            })
            .collect();
    }
    out.into_iter().map(TomographySetting).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub setting: usize,
    /// Counts per outcome; bit `k−1−q` of the index is qubit `q` (1 = `e`).
    pub counts: Vec<u64>,
    pub shots: u64,
}

/// Restrict to the {g, e} subspace of every site, checking leakage.
fn qubit_block(rho: &DensityMatrix) -> Result<CMatrix> {
    let space = rho.space();
    if space.sites().iter().all(|s| s.dim == 2) && space.max_excitations().is_none() {
        return Ok(rho.matrix().clone());
    }
    let k = space.sites().len();
    let d = 1usize << k;
    let mut idx = Vec::with_capacity(d);
    for b in 0..d {
        let levels: Vec<usize> = (0..k).map(|q| (b >> (k - 1 - q)) & 1).collect();
        idx.push(space.index_of(&levels));
    }
    let mut out = CMatrix::zeros(d, d);
    let mut kept = 0.0;
    for i in 0..d {
        for j in 0..d {
            if let (Some(a), Some(b)) = (idx[i], idx[j]) {
                out[(i, j)] = rho.matrix()[(a, b)];
            }
        }
        kept += out[(i, i)].re;
    }
    let leak = rho.trace() - kept;
    if leak > LEAKAGE_LIMIT {
        return Err(TomographyError::Leakage(leak));
    }
    Ok(out)
}

fn apply_confusion(p: &[f64], k: usize, mats: &[[[f64; 2]; 2]]) -> Vec<f64> {
    let mut cur = p.to_vec();
    for (q, m) in mats.iter().enumerate().take(k) {
        let bit = 1usize << (k - 1 - q);
        let mut next = vec![0.0; cur.len()];
        for (i, v) in cur.iter().enumerate() {
            let t = usize::from(i & bit != 0);
            next[i & !bit] += m[0][t] * v;
            next[i | bit] += m[1][t] * v;
        }
        cur = next;
    }
    cur
}

/// Observed outcome probabilities with unlimited shots.
pub fn readout_probabilities(
    rho: &DensityMatrix,
    setting: &TomographySetting,
    confusion: &[ConfusionMatrix],
) -> Result<Vec<f64>> {
    let m = qubit_block(rho)?;
    let k = setting.0.len();
    if m.nrows() != 1 << k {
        return Err(HilbertError::DimensionMismatch {
            expected: 1 << k,
            actual: m.nrows(),
        }
        .into());
    }
    if confusion.len() != k {
        return Err(TomographyError::ConfusionCount {
            expected: k,
            actual: confusion.len(),
        });
    }
    let u = setting.unitary();
    let r = &u * m * u.adjoint();
    let p: Vec<f64> = (0..r.nrows()).map(|i| r[(i, i)].re.max(0.0)).collect();
    let mats: Vec<_> = confusion.iter().map(|c| c.matrix()).collect();
    Ok(apply_confusion(&p, k, &mats))
}

/// Multinomial draw of `shots` outcomes from `probs`.
pub fn sample_counts<R: Rng>(probs: &[f64], shots: u64, rng: &mut R) -> Vec<u64> {
    let total: f64 = probs.iter().sum();
    let mut left = shots;
    let mut mass = total;
    let mut out = vec![0u64; probs.len()];
    for (i, p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i == probs.len() - 1 || mass <= 0.0 {
            out[i] = left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let n = Binomial::new(left, q).expect("valid binomial").sample(rng);
        out[i] = n;
        left -= n;
        mass -= p;
    }
    out
}

pub fn simulate_readout(
    rho: &DensityMatrix,
    setting_index: usize,
    setting: &TomographySetting,
    confusion: &[ConfusionMatrix],
    shots: u64,
    seed: u64,
) -> Result<ShotRecord> {
    if shots == 0 {
        return Err(TomographyError::NoShots);
    }
    let p = readout_probabilities(rho, setting, confusion)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ShotRecord {
        setting: setting_index,
        counts: sample_counts(&p, shots, &mut rng),
        shots,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mitigated {
    pub probs: Vec<f64>,
    /// Total negative mass clipped after inversion.
    pub l1_deficit: f64,
}

pub fn mitigate_readout(probs: &[f64], confusion: &[ConfusionMatrix]) -> Result<Mitigated> {
    let k = confusion.len();
    if probs.len() != 1 << k {
        return Err(TomographyError::ConfusionCount {
            expected: probs.len().trailing_zeros() as usize,
            actual: k,
        });
    }
    let mut inv = Vec::with_capacity(k);
    for c in confusion {
        ConfusionMatrix::new(c.fg, c.fe)?;
        inv.push(c.inverse());
    }
    let raw = apply_confusion(probs, k, &inv);
    let deficit: f64 = raw.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    let clipped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    Ok(Mitigated {
        probs: clipped.iter().map(|v| v / s).collect(),
        l1_deficit: deficit,
    })
}

/// Measured Pauli per (rotation, qubit): index in {I, X, Y, Z} and sign.
fn measured_pauli(r: PreRotation) -> (usize, f64) {
    let u = r.unitary();
    let z = crate::hilbert::pauli_z();
    let obs = u.adjoint() * z * &u;
    let paulis = pauli_matrices(1).expect("one qubit");
    for (i, p) in paulis.iter().enumerate().skip(1) {
        let c = (p * &obs).trace().re / 2.0;
        if (c.abs() - 1.0).abs() < 1e-9 {
            return (i, c.signum());
        }
    }
    unreachable!("pre-rotations map Z onto a Pauli axis")
}

/// Linear-inversion density matrix from mitigated probabilities for all
/// `3^k` settings, projected onto the physical set.
pub fn reconstruct_density(k: usize, probs: &[Vec<f64>]) -> Result<DensityMatrix> {
    let settings = all_settings(k);
    if probs.len() != settings.len() {
        return Err(TomographyError::IncompleteSettings {
            expected: settings.len(),
            actual: probs.len(),
        });
    }
    if !(1..=6).contains(&k) {
        return Err(TomographyError::Unsupported(k));
    }
    let meas: Vec<Vec<(usize, f64)>> = settings
        .iter()
        .map(|s| s.0.iter().map(|r| measured_pauli(*r)).collect())
        .collect();
    let d = 1usize << k;
    let n_paulis = 4usize.pow(k as u32);
    let mut sums = vec![0.0; n_paulis];
    let mut hits = vec![0usize; n_paulis];
    for (si, p) in probs.iter().enumerate() {
        if p.len() != d {
            return Err(TomographyError::IncompleteSettings {
                expected: d,
                actual: p.len(),
            });
        }
        // every subset of qubits gives one Pauli estimate from this setting
        for mask in 0..d {
            let mut idx = 0usize;
            let mut sign = 1.0;
            for (q, &(pauli, s)) in meas[si].iter().enumerate() {
                let on = mask >> (k - 1 - q) & 1 == 1;
                idx = idx * 4 + if on { pauli } else { 0 };
                if on {
                    sign *= s;
                }
            }
            let mut ev = 0.0;
            for (o, po) in p.iter().enumerate() {
                let parity = (o & mask).count_ones() % 2;
                ev += if parity == 1 { -po } else { *po };
            }
            sums[idx] += sign * ev;
            hits[idx] += 1;
        }
    }
    let basis = pauli_matrices(k)?;
    let mut m = CMatrix::zeros(d, d);
    for (i, p) in basis.iter().enumerate() {
        let e = sums[i] / hits[i] as f64;
        m += p * C64::new(e / d as f64, 0.0);
    }
    let space = HilbertSpace::qubits(k)?;
    Ok(DensityMatrix::from_projected(space, &hermitian_part(&m))?)
}

/// Mitigate and reconstruct from shot records of all settings.
pub fn reconstruct_from_records(
    k: usize,
    records: &[ShotRecord],
    confusion: &[ConfusionMatrix],
) -> Result<(DensityMatrix, f64)> {
    let n = 3usize.pow(k as u32);
    if records.len() != n {
        return Err(TomographyError::IncompleteSettings {
            expected: n,
            actual: records.len(),
        });
    }
    let mut ordered: Vec<Option<&ShotRecord>> = vec![None; n];
    for r in records {
        let sum: u64 = r.counts.iter().sum();
        if sum != r.shots || r.shots == 0 {
            return Err(TomographyError::InconsistentShots {
                setting: r.setting,
                sum,
                shots: r.shots,
            });
        }
        if r.setting < n {
            ordered[r.setting] = Some(r);
        }
    }
    let mut probs = Vec::with_capacity(n);
    let mut deficit: f64 = 0.0;
    for (i, r) in ordered.iter().enumerate() {
        let r = r.ok_or(TomographyError::IncompleteSettings { expected: n, actual: i })?;
        let p: Vec<f64> = r.counts.iter().map(|c| *c as f64 / r.shots as f64).collect();
        let m = mitigate_readout(&p, confusion)?;
        deficit = deficit.max(m.l1_deficit);
        probs.push(m.probs);
    }
    Ok((reconstruct_density(k, &probs)?, deficit))
}

/// Process-tomography inputs: `|g⟩, (|g⟩−i|e⟩)/√2, (|g⟩+|e⟩)/√2, |e⟩`, and
/// their tensor products for two qubits.
pub fn process_input_states(k: usize) -> Result<Vec<CVector>> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let single = [
        CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]),
        CVector::from_vec(vec![C64::new(h, 0.0), C64::new(0.0, -h)]),
        CVector::from_vec(vec![C64::new(h, 0.0), C64::new(h, 0.0)]),
        CVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]),
    ];
    match k {
        1 => Ok(single.to_vec()),
        2 => Ok(single
            .iter()
            .flat_map(|a| single.iter().map(move |b| a.kronecker(b)))
            .collect()),
        _ => Err(TomographyError::Unsupported(k)),
    }
}

/// Least-squares `χ` from input/output density matrices, projected onto the
/// physical set.
pub fn reconstruct_process(inputs: &[CMatrix], outputs: &[CMatrix]) -> Result<ProcessMatrix> {
    let chi = process_least_squares(inputs, outputs)?;
    let k = chi.nrows().trailing_zeros() as usize / 2;
    Ok(ProcessMatrix::from_projected(k, &hermitian_part(&chi))?)
}

/// Unconstrained least-squares `χ`.
pub fn process_least_squares(inputs: &[CMatrix], outputs: &[CMatrix]) -> Result<CMatrix> {
    if inputs.is_empty() || inputs.len() != outputs.len() {
        return Err(TomographyError::IncompleteSettings {
            expected: inputs.len(),
            actual: outputs.len(),
        });
    }
    let d = inputs[0].nrows();
    let k = match d {
        2 => 1,
        4 => 2,
        _ => return Err(TomographyError::Unsupported(d)),
    };
    let basis = pauli_matrices(k)?;
    let nb = basis.len();
    let rows = inputs.len() * d * d;
    let mut a = DMatrix::<C64>::zeros(rows, nb * nb);
    let mut b = DVector::<C64>::zeros(rows);
    for (i, (rin, rout)) in inputs.iter().zip(outputs).enumerate() {
        let left: Vec<CMatrix> = basis.iter().map(|p| p * rin).collect();
        for (m, lm) in left.iter().enumerate() {
            for (n, pn) in basis.iter().enumerate() {
                let t = lm * pn.adjoint();
                for r in 0..d {
                    for c in 0..d {
                        a[(i * d * d + r * d + c, m * nb + n)] = t[(r, c)];
                    }
                }
            }
        }
        for r in 0..d {
            for c in 0..d {
                b[i * d * d + r * d + c] = rout[(r, c)];
            }
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count();
    if rank < nb * nb {
        return Err(TomographyError::RankDeficient { rank, needed: nb * nb });
    }
    let x = svd.solve(&b, 1e-10 * smax).expect("svd with u and v");
    Ok(CMatrix::from_fn(nb, nb, |m, n| x[m * nb + n]))
}

/// Haar-ish random density matrix from a Ginibre draw.
pub fn random_density<R: Rng>(k: usize, rank: usize, rng: &mut R) -> CMatrix {
    let d = 1usize << k;
    let g = CMatrix::from_fn(d, rank.max(1), |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    let m = &g * g.adjoint();
    let t = m.trace();
    hermitian_part(&(m / t))
}

pub fn write_records_csv<W: Write>(records: &[ShotRecord], settings: &[TomographySetting], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let io = |e: csv::Error| TomographyError::Io(std::io::Error::other(e));
    wtr.write_record(["setting", "outcome", "count"]).map_err(io)?;
    for r in records {
        let k = settings[r.setting].0.len();
        for (o, c) in r.counts.iter().enumerate() {
            let bits: String = (0..k)
                .map(|q| if (o >> (k - 1 - q)) & 1 == 1 { '1' } else { '0' })
                .collect();
            wtr.write_record([settings[r.setting].label(), bits, c.to_string()])
                .map_err(io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub schema_version: u32,
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

pub fn matrix_to_json(m: &CMatrix) -> MatrixJson {
    let d = m.nrows();
    MatrixJson {
        schema_version: MATRIX_SCHEMA_VERSION,
        dim: d,
        re: (0..d).map(|i| (0..d).map(|j| m[(i, j)].re).collect()).collect(),
        im: (0..d).map(|i| (0..d).map(|j| m[(i, j)].im).collect()).collect(),
    }
}

pub fn matrix_from_json(j: &MatrixJson) -> CMatrix {
    CMatrix::from_fn(j.dim, j.dim, |r, c| C64::new(j.re[r][c], j.im[r][c]))
}

/// Input-state density matrices for process tomography.
pub fn process_input_densities(k: usize) -> Result<Vec<CMatrix>> {
    Ok(process_input_states(k)?.iter().map(|v| v * v.adjoint()).collect())
}

pub fn unit_trace_projection(m: &CMatrix) -> Result<CMatrix> {
    Ok(project_to_physical(&hermitian_part(m), true)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{ghz_vector, process_fidelity, state_fidelity};
    use approx::assert_abs_diff_eq;

    fn ideal(k: usize) -> Vec<ConfusionMatrix> {
        vec![ConfusionMatrix::ideal(); k]
    }

    #[test]
    fn confusion_arithmetic() {
        let space = HilbertSpace::qubits(1).unwrap();
        let rho = DensityMatrix::ground(&space);
        let c = ConfusionMatrix::new(0.98, 0.95).unwrap();
        let p = readout_probabilities(&rho, &TomographySetting(vec![PreRotation::I]), &[c]).unwrap();
        assert_abs_diff_eq!(p[1], 0.02, epsilon = 1e-15);
        assert!(ConfusionMatrix::new(0.4, 0.9).is_err());
    }

    #[test]
    fn identity_confusion_excited_reads_e() {
        let space = HilbertSpace::qubits(1).unwrap();
        let rho = DensityMatrix::from_pure(space.clone(), &space.basis_vector(&[("q0", 1)]).unwrap()).unwrap();
        let r = simulate_readout(&rho, 0, &TomographySetting(vec![PreRotation::I]), &ideal(1), 1000, 7).unwrap();
        assert_eq!(r.counts, vec![0, 1000]);
    }

    #[test]
    fn readout_is_deterministic_per_seed() {
        let space = HilbertSpace::qubits(2).unwrap();
        let rho = DensityMatrix::maximally_mixed(&space);
        let s = TomographySetting(vec![PreRotation::X2, PreRotation::I]);
        let a = simulate_readout(&rho, 0, &s, &ideal(2), 3000, 42).unwrap();
        let b = simulate_readout(&rho, 0, &s, &ideal(2), 3000, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.iter().sum::<u64>(), 3000);
        assert!(simulate_readout(&rho, 0, &s, &ideal(2), 0, 42).is_err());
    }

    #[test]
    fn mitigation_examples() {
        let c = ConfusionMatrix::new(0.98, 1.0).unwrap();
        let m = mitigate_readout(&[0.98, 0.02], &[c]).unwrap();
        assert_abs_diff_eq!(m.probs[0], 1.0, epsilon = 1e-15);
        let m = mitigate_readout(&[0.3, 0.7], &ideal(1)).unwrap();
        assert_eq!(m.probs, vec![0.3, 0.7]);
        let cs = [
            ConfusionMatrix::new(0.97, 0.93).unwrap(),
            ConfusionMatrix::new(0.99, 0.95).unwrap(),
        ];
        let truth = [0.1, 0.2, 0.3, 0.4];
        let mats: Vec<_> = cs.iter().map(|c| c.matrix()).collect();
        let obs = apply_confusion(&truth, 2, &mats);
        let back = mitigate_readout(&obs, &cs).unwrap();
        for (a, b) in back.probs.iter().zip(truth) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn leakage_is_rejected() {
        let space = HilbertSpace::new(vec![crate::hilbert::Site::qutrit("Q2A")]).unwrap();
        let rho = DensityMatrix::from_pure(space.clone(), &space.basis_vector(&[("Q2A", 2)]).unwrap()).unwrap();
        assert!(matches!(
            readout_probabilities(&rho, &TomographySetting(vec![PreRotation::I]), &ideal(1)),
            Err(TomographyError::Leakage(_))
        ));
    }

    fn exact_probs(rho: &DensityMatrix, k: usize) -> Vec<Vec<f64>> {
        all_settings(k)
            .iter()
            .map(|s| readout_probabilities(rho, s, &ideal(k)).unwrap())
            .collect()
    }

    #[test]
    fn density_round_trip() {
        let space = HilbertSpace::qubits(1).unwrap();
        let g = DensityMatrix::ground(&space);
        let r = reconstruct_density(1, &exact_probs(&g, 1)).unwrap();
        assert!(crate::hilbert::max_abs(&(r.matrix() - g.matrix())) < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_density(2, 4, &mut rng);
        let rho = DensityMatrix::new(HilbertSpace::qubits(2).unwrap(), m).unwrap();
        let r = reconstruct_density(2, &exact_probs(&rho, 2)).unwrap();
        assert!(crate::hilbert::max_abs(&(r.matrix() - rho.matrix())) < 1e-10);
        let ghz = DensityMatrix::from_pure(HilbertSpace::qubits(3).unwrap(), &ghz_vector(3)).unwrap();
        let r = reconstruct_density(3, &exact_probs(&ghz, 3)).unwrap();
        assert!(state_fidelity(&r, &ghz_vector(3)).unwrap() > 1.0 - 1e-9);
        assert!(reconstruct_density(2, &exact_probs(&rho, 2)[..5]).is_err());
    }

    #[test]
    fn process_identity_and_x() {
        let ins = process_input_densities(1).unwrap();
        let chi = reconstruct_process(&ins, &ins).unwrap();
        assert_abs_diff_eq!(chi.chi()[(0, 0)].re, 1.0, epsilon = 1e-10);
        let x = crate::hilbert::pauli_x();
        let outs: Vec<CMatrix> = ins.iter().map(|r| &x * r * &x).collect();
        let chi = reconstruct_process(&ins, &outs).unwrap();
        assert_abs_diff_eq!(chi.chi()[(1, 1)].re, 1.0, epsilon = 1e-10);
        let id = ProcessMatrix::identity(1).unwrap();
        assert_abs_diff_eq!(process_fidelity(&chi, &id).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn process_rank_deficiency() {
        let ins = process_input_densities(1).unwrap();
        let short = vec![ins[0].clone(), ins[3].clone()];
        assert!(matches!(
            reconstruct_process(&short, &short),
            Err(TomographyError::RankDeficient { .. })
        ));
    }

    #[test]
    fn unitary_process_is_rank_one() {
        let ins = process_input_densities(2).unwrap();
        let cz = CMatrix::from_diagonal(&CVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(-1.0, 0.0),
        ]));
        let outs: Vec<CMatrix> = ins.iter().map(|r| &cz * r * &cz).collect();
        let chi = reconstruct_process(&ins, &outs).unwrap();
        let ideal = ProcessMatrix::from_unitary(&cz).unwrap();
        assert_abs_diff_eq!(process_fidelity(&chi, &ideal).unwrap(), 1.0, epsilon = 1e-9);
        let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(chi.chi().clone())
            .eigenvalues
            .iter()
            .cloned()
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        assert!(ev[1] < 1e-8);
    }

    #[test]
    fn matrix_json_round_trip() {
        let m = CMatrix::from_fn(2, 2, |i, j| C64::new(i as f64, -(j as f64)));
        let j = matrix_to_json(&m);
        assert_eq!(j.schema_version, 1);
        assert_eq!(matrix_from_json(&j), m);
    }

    #[test]
    fn records_csv_layout() {
        let settings = all_settings(1);
        let recs = vec![ShotRecord {
            setting: 1,
            counts: vec![10, 20],
            shots: 30,
        }];
        let mut buf = Vec::new();
        write_records_csv(&recs, &settings, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "setting,outcome,count\nX,0,10\nX,1,20\n"
        );
    }
}
