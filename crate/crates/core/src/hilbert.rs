//! Composite Hilbert spaces of qubits, qutrits and truncated bosonic modes.
//!
//! A [`HilbertSpace`] is an ordered list of sites. Tensor products always use
//! the declaration order, first site most significant. A space may optionally
//! be restricted to basis states with at most `N` total excitations; the
//! Hamiltonians and collapse operators used here never raise the total
//! excitation number, so such a restriction is exact for them and shrinks the
//! state-transfer problems from 2^7 to 8 dimensions.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("duplicate site label `{0}`")]
    DuplicateLabel(String),
    #[error("invalid dimension {dim} for {kind} site `{label}`")]
    InvalidDimension { label: String, kind: SiteKind, dim: usize },
    #[error("unknown site label `{0}`")]
    UnknownSite(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix is not Hermitian (max |m - m^dag| = {0:e})")]
    NotHermitian(f64),
    #[error("trace {0} differs from 1")]
    BadTrace(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("target state is not normalized (norm^2 = {0})")]
    Unnormalized(f64),
    #[error("fidelity has imaginary part {0:e}")]
    ComplexFidelity(f64),
    #[error("unsupported number of qubits: {0}")]
    UnsupportedQubits(usize),
    #[error("space must contain at least one site")]
    EmptySpace,
    #[error("operator leaves the excitation-restricted subspace (leak {0:e})")]
    SubspaceLeak(f64),
}

pub type Result<T> = std::result::Result<T, HilbertError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Qubit,
    Mode,
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteKind::Qubit => f.write_str("qubit"),
            SiteKind::Mode => f.write_str("mode"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub label: String,
    pub kind: SiteKind,
    pub dim: usize,
}

impl Site {
    pub fn qubit(label: impl Into<String>) -> Self {
        Site {
            label: label.into(),
            kind: SiteKind::Qubit,
            dim: 2,
        }
    }

    /// Transmon truncated to {g, e, f}.
    pub fn qutrit(label: impl Into<String>) -> Self {
        Site {
            label: label.into(),
            kind: SiteKind::Qubit,
            dim: 3,
        }
    }

    pub fn mode(label: impl Into<String>, n_max: usize) -> Self {
        Site {
            label: label.into(),
            kind: SiteKind::Mode,
            dim: n_max + 1,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            SiteKind::Qubit => self.dim == 2 || self.dim == 3,
            SiteKind::Mode => self.dim >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(HilbertError::InvalidDimension {
                label: self.label.clone(),
                kind: self.kind,
                dim: self.dim,
            })
        }
    }
}

#[derive(Debug)]
struct SpaceInner {
    sites: Vec<Site>,
    max_excitations: Option<usize>,
    /// Per-site level of every basis state, in basis order.
    basis: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

/// Ordered tensor product of sites, optionally excitation-restricted.
///
/// Cheap to clone; the basis table is shared.
#[derive(Clone)]
pub struct HilbertSpace {
    inner: Arc<SpaceInner>,
}

impl fmt::Debug for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HilbertSpace")
            .field("sites", &self.inner.sites)
            .field("max_excitations", &self.inner.max_excitations)
            .field("dim", &self.dim())
            .finish()
    }
}

impl PartialEq for HilbertSpace {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.sites == other.inner.sites && self.inner.max_excitations == other.inner.max_excitations)
    }
}

impl HilbertSpace {
    pub fn new(sites: Vec<Site>) -> Result<Self> {
        Self::build(sites, None)
    }

    /// Space spanned by product states with at most `max` total excitations.
    pub fn with_max_excitations(sites: Vec<Site>, max: usize) -> Result<Self> {
        Self::build(sites, Some(max))
    }

    /// `n` plain qubits labelled `q0`, `q1`, ...
    pub fn qubits(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| Site::qubit(format!("q{i}"))).collect())
    }

    fn build(sites: Vec<Site>, max_excitations: Option<usize>) -> Result<Self> {
        if sites.is_empty() {
            return Err(HilbertError::EmptySpace);
        }
        for (i, s) in sites.iter().enumerate() {
            s.validate()?;
            if sites[..i].iter().any(|o| o.label == s.label) {
                return Err(HilbertError::DuplicateLabel(s.label.clone()));
            }
        }
        let dims: Vec<usize> = sites.iter().map(|s| s.dim).collect();
        let product: usize = dims.iter().product();
        let mut basis = Vec::new();
        let mut digits = vec![0usize; dims.len()];
        for _ in 0..product {
            let total: usize = digits.iter().sum();
            if max_excitations.is_none_or(|m| total <= m) {
                basis.push(digits.clone());
            }
            // increment, last site fastest
            for k in (0..dims.len()).rev() {
                digits[k] += 1;
                if digits[k] < dims[k] {
                    break;
                }
                digits[k] = 0;
            }
        }
        let index = basis.iter().enumerate().map(|(i, d)| (d.clone(), i)).collect();
        Ok(HilbertSpace {
            inner: Arc::new(SpaceInner {
                sites,
                max_excitations,
                basis,
                index,
            }),
        })
    }

    pub fn sites(&self) -> &[Site] {
        &self.inner.sites
    }

    pub fn dim(&self) -> usize {
        self.inner.basis.len()
    }

    pub fn max_excitations(&self) -> Option<usize> {
        self.inner.max_excitations
    }

    pub fn site_index(&self, label: &str) -> Result<usize> {
        self.inner
            .sites
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| HilbertError::UnknownSite(label.to_string()))
    }

    pub fn site(&self, label: &str) -> Result<&Site> {
        Ok(&self.inner.sites[self.site_index(label)?])
    }

    pub fn contains(&self, label: &str) -> bool {
        self.inner.sites.iter().any(|s| s.label == label)
    }

    /// Levels of each site in basis state `i`.
    pub fn levels(&self, i: usize) -> &[usize] {
        &self.inner.basis[i]
    }

    pub fn index_of(&self, levels: &[usize]) -> Option<usize> {
        self.inner.index.get(levels).copied()
    }

    /// Basis vector for a product state given as (label, level) pairs; all
    /// other sites are in their ground state.
    pub fn basis_vector(&self, excited: &[(&str, usize)]) -> Result<CVector> {
        let mut levels = vec![0usize; self.inner.sites.len()];
        for (label, level) in excited {
            let k = self.site_index(label)?;
            if *level >= self.inner.sites[k].dim {
                return Err(HilbertError::DimensionMismatch {
                    expected: self.inner.sites[k].dim,
                    actual: *level + 1,
                });
            }
            levels[k] = *level;
        }
        let i = self.index_of(&levels).ok_or(HilbertError::SubspaceLeak(1.0))?;
        let mut v = CVector::zeros(self.dim());
        v[i] = C64::new(1.0, 0.0);
        Ok(v)
    }

    /// Sub-space made of the listed sites, in this space's order. Keeps the
    /// excitation cap, which the reduced states automatically satisfy.
    pub fn subspace(&self, keep: &[&str]) -> Result<HilbertSpace> {
        for k in keep {
            self.site_index(k)?;
        }
        let sites: Vec<Site> = self
            .inner
            .sites
            .iter()
            .filter(|s| keep.contains(&s.label.as_str()))
            .cloned()
            .collect();
        HilbertSpace::build(sites, self.inner.max_excitations)
    }
}

/// Operator on a [`HilbertSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        check_square(&matrix, space.dim())?;
        Ok(Operator { space, matrix })
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Operator {
            space: space.clone(),
            matrix: CMatrix::identity(d, d),
        }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
        }
    }
}

fn check_square(m: &CMatrix, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(HilbertError::DimensionMismatch {
            expected: dim,
            actual: if m.nrows() != dim { m.nrows() } else { m.ncols() },
        });
    }
    Ok(())
}

/// Embed a product of single-site operators, `⊗_k local_k` with identity on
/// the remaining sites. On an excitation-restricted space the product is
/// evaluated on full product states and then restricted, so number-conserving
/// products such as `σ_2 σ_j†` stay exact at the cap.
pub fn embed_product(factors: &[(&str, &CMatrix)], space: &HilbertSpace) -> Result<Operator> {
    let mut placed: Vec<(usize, &CMatrix)> = Vec::with_capacity(factors.len());
    for (label, local) in factors {
        let k = space.site_index(label)?;
        let d = space.sites()[k].dim;
        check_square(local, d)?;
        placed.push((k, local));
    }
    let dim = space.dim();
    let mut m = CMatrix::zeros(dim, dim);
    let mut target = Vec::new();
    for col in 0..dim {
        let levels = space.levels(col);
        // expand the action of the local factors on this column
        let mut terms: Vec<(Vec<usize>, C64)> = vec![(levels.to_vec(), C64::new(1.0, 0.0))];
        for (k, local) in &placed {
            let mut next = Vec::new();
            for (lv, amp) in &terms {
                let from = lv[*k];
                for to in 0..local.nrows() {
                    let a = local[(to, from)];
                    if a != C64::new(0.0, 0.0) {
                        let mut nl = lv.clone();
                        nl[*k] = to;
                        next.push((nl, *amp * a));
                    }
                }
            }
            terms = next;
        }
        for (lv, amp) in terms {
            target.clear();
            target.extend_from_slice(&lv);
            if let Some(row) = space.index_of(&target) {
                m[(row, col)] += amp;
            }
        }
    }
    Ok(Operator {
        space: space.clone(),
        matrix: m,
    })
}

/// `I ⊗ … ⊗ local ⊗ … ⊗ I` with `local` at `site_label`.
pub fn embed_operator(local: &CMatrix, site_label: &str, space: &HilbertSpace) -> Result<Operator> {
    embed_product(&[(site_label, local)], space)
}

/// Density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates the density-matrix invariants at the default tolerances.
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        check_square(&matrix, space.dim())?;
        check_physical(&matrix, HERMITIAN_TOL, TRACE_TOL, PSD_TOL)?;
        Ok(DensityMatrix { space, matrix })
    }

    /// Skips validation. Used by integrators, which check invariants at
    /// frame boundaries instead of every step.
    pub(crate) fn new_unchecked(space: HilbertSpace, matrix: CMatrix) -> Self {
        debug_assert_eq!(matrix.nrows(), space.dim());
        DensityMatrix { space, matrix }
    }

    pub fn from_pure(space: HilbertSpace, psi: &CVector) -> Result<Self> {
        if psi.len() != space.dim() {
            return Err(HilbertError::DimensionMismatch {
                expected: space.dim(),
                actual: psi.len(),
            });
        }
        let n = psi.norm_squared();
        if (n - 1.0).abs() > HERMITIAN_TOL {
            return Err(HilbertError::Unnormalized(n));
        }
        Ok(DensityMatrix {
            space,
            matrix: psi * psi.adjoint(),
        })
    }

    /// Ground state of every site.
    pub fn ground(space: &HilbertSpace) -> Self {
        let d = space.dim();
        let mut m = CMatrix::zeros(d, d);
        m[(0, 0)] = C64::new(1.0, 0.0);
        DensityMatrix {
            space: space.clone(),
            matrix: m,
        }
    }

    pub fn maximally_mixed(space: &HilbertSpace) -> Self {
        let d = space.dim();
        DensityMatrix {
            space: space.clone(),
            matrix: CMatrix::identity(d, d) / C64::new(d as f64, 0.0),
        }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Expectation value `Tr(ρ O)`.
    pub fn expectation(&self, op: &CMatrix) -> C64 {
        (&self.matrix * op).trace()
    }

    /// `U ρ U†`.
    pub fn conjugate(&self, u: &CMatrix) -> DensityMatrix {
        DensityMatrix {
            space: self.space.clone(),
            matrix: u * &self.matrix * u.adjoint(),
        }
    }

    /// Apply a channel given by Kraus operators on the full space.
    pub fn apply_kraus(&self, kraus: &[CMatrix]) -> DensityMatrix {
        let d = self.space.dim();
        let mut out = CMatrix::zeros(d, d);
        for k in kraus {
            out += k * &self.matrix * k.adjoint();
        }
        DensityMatrix {
            space: self.space.clone(),
            matrix: out,
        }
    }
}

/// Quantum process in the Pauli basis: `E(ρ) = Σ χ_mn P_m ρ P_n†`, with
/// unnormalized Paulis so that a trace-preserving process has `Tr χ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMatrix {
    n_qubits: usize,
    chi: CMatrix,
}

impl ProcessMatrix {
    pub fn new(n_qubits: usize, chi: CMatrix) -> Result<Self> {
        if !(1..=2).contains(&n_qubits) {
            return Err(HilbertError::UnsupportedQubits(n_qubits));
        }
        check_square(&chi, 4usize.pow(n_qubits as u32))?;
        check_physical(&chi, HERMITIAN_TOL, TRACE_TOL, PSD_TOL)?;
        Ok(ProcessMatrix { n_qubits, chi })
    }

    /// Process matrix of a unitary channel `ρ → U ρ U†`.
    pub fn from_unitary(u: &CMatrix) -> Result<Self> {
        let n = qubits_for_dim(u.nrows())?;
        let basis = pauli_matrices(n)?;
        let d = u.nrows() as f64;
        let coeffs = CVector::from_iterator(basis.len(), basis.iter().map(|p| (p.adjoint() * u).trace() / d));
        Ok(ProcessMatrix {
            n_qubits: n,
            chi: &coeffs * coeffs.adjoint(),
        })
    }

    pub fn identity(n_qubits: usize) -> Result<Self> {
        let d = 1usize << n_qubits;
        Self::from_unitary(&CMatrix::identity(d, d))
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn chi(&self) -> &CMatrix {
        &self.chi
    }

    /// Evaluate the channel on a `2^n × 2^n` input.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let basis = pauli_matrices(self.n_qubits).expect("validated qubit count");
        apply_chi(&self.chi, &basis, rho)
    }
}

pub(crate) fn apply_chi(chi: &CMatrix, basis: &[CMatrix], rho: &CMatrix) -> CMatrix {
    let d = rho.nrows();
    let left: Vec<CMatrix> = basis.iter().map(|p| p * rho).collect();
    let mut out = CMatrix::zeros(d, d);
    for (m, pm_rho) in left.iter().enumerate() {
        for (n, pn) in basis.iter().enumerate() {
            let c = chi[(m, n)];
            if c.norm() > 1e-15 {
                out += (pm_rho * pn.adjoint()) * c;
            }
        }
    }
    out
}

pub(crate) fn qubits_for_dim(d: usize) -> Result<usize> {
    match d {
        2 => Ok(1),
        4 => Ok(2),
        _ => Err(HilbertError::UnsupportedQubits(d.trailing_zeros() as usize)),
    }
}

/// Max elementwise `|m − m†|`.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest elementwise modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    let eig = SymmetricEigen::new(hermitian_part(m));
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn check_physical(m: &CMatrix, herm: f64, tr: f64, psd: f64) -> Result<()> {
    let h = hermiticity_error(m);
    if h > herm {
        return Err(HilbertError::NotHermitian(h));
    }
    let t = m.trace().re;
    if (t - 1.0).abs() > tr {
        return Err(HilbertError::BadTrace(t));
    }
    let e = min_eigenvalue(m);
    if e < -psd {
        return Err(HilbertError::NotPositive(e));
    }
    Ok(())
}

/// Partial trace keeping `keep` (order follows the original space).
pub fn partial_trace(rho: &DensityMatrix, keep: &[&str]) -> Result<DensityMatrix> {
    let space = rho.space();
    let sub = space.subspace(keep)?;
    let kept: Vec<usize> = space
        .sites()
        .iter()
        .enumerate()
        .filter(|(_, s)| keep.contains(&s.label.as_str()))
        .map(|(i, _)| i)
        .collect();
    let traced: Vec<usize> = (0..space.sites().len()).filter(|i| !kept.contains(i)).collect();
    let d = space.dim();
    // group basis states by their traced-out levels
    let mut reduced_index = Vec::with_capacity(d);
    let mut env_index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut env_of = Vec::with_capacity(d);
    for i in 0..d {
        let lv = space.levels(i);
        let k: Vec<usize> = kept.iter().map(|&s| lv[s]).collect();
        reduced_index.push(sub.index_of(&k).expect("reduced state within cap"));
        let e: Vec<usize> = traced.iter().map(|&s| lv[s]).collect();
        let next = env_index.len();
        env_of.push(*env_index.entry(e).or_insert(next));
    }
    let m = rho.matrix();
    let mut out = CMatrix::zeros(sub.dim(), sub.dim());
    for i in 0..d {
        for j in 0..d {
            if env_of[i] == env_of[j] {
                out[(reduced_index[i], reduced_index[j])] += m[(i, j)];
            }
        }
    }
    Ok(DensityMatrix::new_unchecked(sub, out))
}

/// `⟨ψ|ρ|ψ⟩` for a normalized pure target.
pub fn state_fidelity(rho: &DensityMatrix, target: &CVector) -> Result<f64> {
    if target.len() != rho.space().dim() {
        return Err(HilbertError::DimensionMismatch {
            expected: rho.space().dim(),
            actual: target.len(),
        });
    }
    let n = target.norm_squared();
    if (n - 1.0).abs() > HERMITIAN_TOL {
        return Err(HilbertError::Unnormalized(n));
    }
    let f = (target.adjoint() * rho.matrix() * target)[(0, 0)];
    if f.im.abs() > 1e-10 {
        return Err(HilbertError::ComplexFidelity(f.im));
    }
    Ok(f.re)
}

/// `Tr(χ · χ_ideal)`.
pub fn process_fidelity(chi: &ProcessMatrix, chi_ideal: &ProcessMatrix) -> Result<f64> {
    if chi.n_qubits != chi_ideal.n_qubits {
        return Err(HilbertError::DimensionMismatch {
            expected: chi_ideal.chi.nrows(),
            actual: chi.chi.nrows(),
        });
    }
    let f = (&chi.chi * &chi_ideal.chi).trace();
    if f.im.abs() > 1e-10 {
        return Err(HilbertError::ComplexFidelity(f.im));
    }
    Ok(f.re)
}

/// Nearest positive semidefinite matrix in Frobenius norm.
///
/// With `unit_trace`, the eigenvalues are first shifted uniformly to sum to
/// one, then negative eigenvalues are clipped to zero with the deficit spread
/// uniformly over the remaining ones, repeating until none are negative.
/// Without it, negative eigenvalues are simply clipped.
pub fn project_to_physical(m: &CMatrix, unit_trace: bool) -> Result<CMatrix> {
    let h = hermiticity_error(m);
    if h > 1e-8 {
        return Err(HilbertError::NotHermitian(h));
    }
    let herm = hermitian_part(m);
    let eig = SymmetricEigen::new(herm.clone());
    let n = eig.eigenvalues.len();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    let trace: f64 = vals.iter().sum();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let trace_ok = !unit_trace || (trace - 1.0).abs() <= 1e-14;
    if min >= 0.0 && trace_ok {
        return Ok(herm);
    }
    if unit_trace {
        let shift = (1.0 - trace) / n as f64;
        vals.iter_mut().for_each(|v| *v += shift);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        let mut deficit = 0.0;
        let mut remaining = n;
        while remaining > 0 {
            let smallest = order[remaining - 1];
            if vals[smallest] + deficit / remaining as f64 >= 0.0 {
                break;
            }
            deficit += vals[smallest];
            vals[smallest] = 0.0;
            remaining -= 1;
        }
        let share = deficit / remaining.max(1) as f64;
        for &k in &order[..remaining] {
            vals[k] += share;
        }
    } else {
        vals.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let d = m.nrows();
    let mut out = CMatrix::zeros(d, d);
    for (k, v) in vals.iter().enumerate() {
        if *v != 0.0 {
            let col = eig.eigenvectors.column(k);
            out += (col * col.adjoint()) * C64::new(*v, 0.0);
        }
    }
    Ok(hermitian_part(&out))
}

impl DensityMatrix {
    /// Project a Hermitian estimate onto the physical set.
    pub fn from_projected(space: HilbertSpace, m: &CMatrix) -> Result<Self> {
        check_square(m, space.dim())?;
        let p = project_to_physical(m, true)?;
        DensityMatrix::new(space, p)
    }
}

impl ProcessMatrix {
    pub fn from_projected(n_qubits: usize, m: &CMatrix) -> Result<Self> {
        let p = project_to_physical(m, true)?;
        ProcessMatrix::new(n_qubits, p)
    }
}

pub fn identity2() -> CMatrix {
    CMatrix::identity(2, 2)
}

pub fn pauli_x() -> CMatrix {
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    CMatrix::from_row_slice(2, 2, &[o, l, l, o])
}

pub fn pauli_y() -> CMatrix {
    let o = C64::new(0.0, 0.0);
    let i = C64::new(0.0, 1.0);
    CMatrix::from_row_slice(2, 2, &[o, -i, i, o])
}

/// `diag(1, −1)` in the {g, e} basis.
pub fn pauli_z() -> CMatrix {
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    CMatrix::from_row_slice(2, 2, &[l, o, o, -l])
}

/// Lowering operator on a `dim`-level ladder (√n matrix elements).
pub fn lowering(dim: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    m
}

pub fn number(dim: usize) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(dim, (0..dim).map(|n| C64::new(n as f64, 0.0))))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Plain Pauli matrices `{I, X, Y, Z}^⊗n`, lexicographic.
pub fn pauli_matrices(n: usize) -> Result<Vec<CMatrix>> {
    if !(1..=6).contains(&n) {
        return Err(HilbertError::UnsupportedQubits(n));
    }
    let single = [identity2(), pauli_x(), pauli_y(), pauli_z()];
    let mut out: Vec<CMatrix> = single.to_vec();
    for _ in 1..n {
        out = out
            .iter()
            .flat_map(|a| single.iter().map(move |b| kron(a, b)))
            .collect();
    }
    Ok(out)
}

/// Pauli basis for one- or two-qubit process matrices.
pub fn pauli_basis(n_qubits: usize) -> Result<Vec<Operator>> {
    if !(1..=2).contains(&n_qubits) {
        return Err(HilbertError::UnsupportedQubits(n_qubits));
    }
    let space = HilbertSpace::qubits(n_qubits)?;
    Ok(pauli_matrices(n_qubits)?
        .into_iter()
        .map(|m| Operator {
            space: space.clone(),
            matrix: m,
        })
        .collect())
}

/// `(|0…0⟩ + |1…1⟩)/√2` on `n` qubits.
pub fn ghz_vector(n: usize) -> CVector {
    let d = 1usize << n;
    let mut v = CVector::zeros(d);
    let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    v[0] = a;
    v[d - 1] = a;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn diag(vals: &[f64]) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_iterator(vals.len(), vals.iter().map(|v| c(*v))))
    }

    #[test]
    fn embed_single_site_is_identity_map() {
        let space = HilbertSpace::new(vec![Site::qubit("q0")]).unwrap();
        let op = embed_operator(&pauli_x(), "q0", &space).unwrap();
        assert_eq!(op.matrix(), &pauli_x());
    }

    #[test]
    fn embed_identity_gives_identity() {
        let space = HilbertSpace::new(vec![Site::qubit("a"), Site::mode("m", 2), Site::qutrit("b")]).unwrap();
        let op = embed_operator(&CMatrix::identity(3, 3), "m", &space).unwrap();
        assert_eq!(op.matrix(), &CMatrix::identity(18, 18));
    }

    #[test]
    fn embed_mode_lowering_matches_hand_kronecker() {
        let space = HilbertSpace::new(vec![Site::qubit("q"), Site::mode("m1", 1)]).unwrap();
        let op = embed_operator(&lowering(2), "m1", &space).unwrap();
        let mut expected = CMatrix::zeros(4, 4);
        expected[(0, 1)] = c(1.0);
        expected[(2, 3)] = c(1.0);
        assert_eq!(op.matrix(), &expected);
    }

    #[test]
    fn embed_errors() {
        let space = HilbertSpace::qubits(2).unwrap();
        assert!(matches!(
            embed_operator(&pauli_x(), "nope", &space),
            Err(HilbertError::UnknownSite(_))
        ));
        assert!(matches!(
            embed_operator(&CMatrix::identity(3, 3), "q0", &space),
            Err(HilbertError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn space_validation() {
        assert!(matches!(
            HilbertSpace::new(vec![Site::qubit("a"), Site::qubit("a")]),
            Err(HilbertError::DuplicateLabel(_))
        ));
        let bad = Site {
            label: "q".into(),
            kind: SiteKind::Qubit,
            dim: 4,
        };
        assert!(HilbertSpace::new(vec![bad]).is_err());
        assert!(HilbertSpace::new(vec![Site::mode("m", 0)]).is_err());
        let s = HilbertSpace::new(vec![Site::qutrit("a"), Site::mode("m", 3)]).unwrap();
        assert_eq!(s.dim(), 12);
    }

    #[test]
    fn excitation_cap_restricts_basis() {
        let sites = vec![Site::qubit("a"), Site::qubit("b"), Site::mode("m", 1)];
        let s = HilbertSpace::with_max_excitations(sites, 1).unwrap();
        assert_eq!(s.dim(), 4);
        assert_eq!(s.levels(0), &[0, 0, 0]);
        // a number-conserving exchange term survives at the cap
        let up = lowering(2).adjoint();
        let op = embed_product(&[("a", &lowering(2)), ("b", &up)], &s).unwrap();
        let from = s.index_of(&[1, 0, 0]).unwrap();
        let to = s.index_of(&[0, 1, 0]).unwrap();
        assert_eq!(op.matrix()[(to, from)], c(1.0));
    }

    #[test]
    fn partial_trace_of_product_state() {
        let space = HilbertSpace::new(vec![Site::qubit("q"), Site::mode("m", 2)]).unwrap();
        let rho = DensityMatrix::ground(&space);
        let r = partial_trace(&rho, &["q"]).unwrap();
        assert_eq!(r.matrix(), &diag(&[1.0, 0.0]));
    }

    #[test]
    fn partial_trace_of_bell_is_mixed() {
        let space = HilbertSpace::qubits(2).unwrap();
        let mut psi = CVector::zeros(4);
        psi[0] = c(std::f64::consts::FRAC_1_SQRT_2);
        psi[3] = c(std::f64::consts::FRAC_1_SQRT_2);
        let rho = DensityMatrix::from_pure(space, &psi).unwrap();
        let r = partial_trace(&rho, &["q0"]).unwrap();
        assert_abs_diff_eq!((r.matrix() - diag(&[0.5, 0.5])).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn partial_trace_unknown_label() {
        let space = HilbertSpace::qubits(2).unwrap();
        let rho = DensityMatrix::ground(&space);
        assert!(partial_trace(&rho, &["zz"]).is_err());
    }

    #[test]
    fn fidelity_of_pure_state_with_itself() {
        let space = HilbertSpace::qubits(3).unwrap();
        let psi = ghz_vector(3);
        let rho = DensityMatrix::from_pure(space, &psi).unwrap();
        assert_abs_diff_eq!(state_fidelity(&rho, &psi).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn fidelity_of_mixed_state_with_ghz() {
        for n in 1..=4 {
            let space = HilbertSpace::qubits(n).unwrap();
            let rho = DensityMatrix::maximally_mixed(&space);
            let f = state_fidelity(&rho, &ghz_vector(n)).unwrap();
            assert_abs_diff_eq!(f, 0.5f64.powi(n as i32), epsilon = 1e-14);
        }
    }

    #[test]
    fn fidelity_rejects_bad_targets() {
        let space = HilbertSpace::qubits(1).unwrap();
        let rho = DensityMatrix::ground(&space);
        let v = CVector::from_vec(vec![c(1.0), c(1.0)]);
        assert!(matches!(state_fidelity(&rho, &v), Err(HilbertError::Unnormalized(_))));
        assert!(state_fidelity(&rho, &ghz_vector(2)).is_err());
    }

    #[test]
    fn identity_process_fidelity() {
        let id = ProcessMatrix::identity(1).unwrap();
        assert_abs_diff_eq!(id.chi()[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(process_fidelity(&id, &id).unwrap(), 1.0, epsilon = 1e-15);
        let id2 = ProcessMatrix::identity(2).unwrap();
        assert!(process_fidelity(&id, &id2).is_err());
    }

    #[test]
    fn projection_examples() {
        let p = project_to_physical(&diag(&[1.0, 0.0]), true).unwrap();
        assert_abs_diff_eq!((p - diag(&[1.0, 0.0])).norm(), 0.0, epsilon = 1e-15);
        let p = project_to_physical(&diag(&[1.1, -0.1]), true).unwrap();
        assert_abs_diff_eq!((p - diag(&[1.0, 0.0])).norm(), 0.0, epsilon = 1e-14);
        let p = project_to_physical(&diag(&[0.6, 0.5, -0.1]), true).unwrap();
        assert_abs_diff_eq!((p - diag(&[0.55, 0.45, 0.0])).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn projection_rejects_non_hermitian() {
        let mut m = diag(&[0.5, 0.5]);
        m[(0, 1)] = c(0.1);
        assert!(matches!(
            project_to_physical(&m, true),
            Err(HilbertError::NotHermitian(_))
        ));
    }

    #[test]
    fn pauli_basis_order() {
        let b1 = pauli_basis(1).unwrap();
        assert_eq!(b1.len(), 4);
        assert_eq!(b1[1].matrix(), &pauli_x());
        let b2 = pauli_basis(2).unwrap();
        assert_eq!(b2.len(), 16);
        assert_eq!(b2[5].matrix(), &kron(&pauli_x(), &pauli_x()));
        for p in b2.iter().chain(b1.iter()) {
            let sq = p.matrix() * p.matrix();
            let d = sq.nrows();
            assert_abs_diff_eq!((sq - CMatrix::identity(d, d)).norm(), 0.0, epsilon = 1e-15);
        }
        assert!(pauli_basis(3).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        let space = HilbertSpace::qubits(1).unwrap();
        assert!(matches!(
            DensityMatrix::new(space.clone(), diag(&[0.7, 0.7])),
            Err(HilbertError::BadTrace(_))
        ));
        assert!(matches!(
            DensityMatrix::new(space, diag(&[1.2, -0.2])),
            Err(HilbertError::NotPositive(_))
        ));
    }
}
