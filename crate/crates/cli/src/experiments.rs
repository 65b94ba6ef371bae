//! Experiment runners. Each takes one grid point and returns its results
//! and artifacts; nothing here touches the filesystem except optional
//! sample inputs.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use qnetsim_core::benchmarking::{self, ErrorChannelSpec, RbConfig, XebConfig};
use qnetsim_core::circuit::{self, QSample};
use qnetsim_core::dynamics::{evolve_master_equation, EvolveOptions, NoiseOverrides};
use qnetsim_core::hilbert::min_eigenvalue;
use qnetsim_core::pipeline::{self, CzModel, Register, StepModels, TransferMap, REGISTER};
use qnetsim_core::protocols::{self, ProtocolStep, TransferParams};
use qnetsim_core::tomography::{self, ConfusionMatrix, ShotRecord};
use qnetsim_core::{
    ControlFrame, DensityMatrix, DeviceConfig, HilbertSpace, Node, PulseSchedule, ScheduleItem, Site, Trajectory,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::scenario::{derive_seed, Experiment};

const DEFAULT_SHOTS: u64 = 3000;

/// Inputs of one grid point.
#[derive(Debug, Clone, Copy)]
pub struct PointContext<'a> {
    pub device: &'a DeviceConfig,
    pub params: &'a Value,
    pub seed: u64,
    pub shots: Option<u64>,
    pub source_dir: &'a Path,
}

/// A named file produced by a run, relative to its point directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct PointOutput {
    pub results: Map<String, Value>,
    pub artifacts: Vec<Artifact>,
}

impl PointOutput {
    fn put(&mut self, key: &str, v: impl Serialize) {
        self.results
            .insert(key.to_string(), serde_json::to_value(v).expect("result serializes"));
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            bytes: csv_bytes(header, rows)?,
        });
        Ok(())
    }

    fn json(&mut self, name: &str, v: impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&v)?;
        bytes.push(b'\n');
        self.artifacts.push(Artifact {
            name: name.to_string(),
            bytes,
        });
        Ok(())
    }

    fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            bytes,
        });
    }
}

pub fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))
}

fn num(v: f64) -> String {
    format!("{v:.12}")
}

fn mhz(v: f64) -> f64 {
    2.0 * PI * v * 1e6
}

fn parse<P: DeserializeOwned>(params: &Value) -> Result<P> {
    serde_path_to_error::deserialize(params.clone())
        .map_err(|e| anyhow!("invalid parameter `params.{}`: {}", e.path(), e.inner()))
}

// ---------------------------------------------------------------------------
// Parameter blocks
// ---------------------------------------------------------------------------

fn default_dt_ns() -> f64 {
    0.1
}

fn options(dt_max_ns: f64, noise: &NoiseOverrides) -> Result<EvolveOptions> {
    if !(dt_max_ns > 0.0 && dt_max_ns.is_finite()) {
        bail!("dt_max_ns must be positive");
    }
    Ok(EvolveOptions {
        dt_max: dt_max_ns * 1e-9,
        sample_stride: 0,
        noise: noise.clone(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiChevronParams {
    pub node: Node,
    pub coupling_mhz: f64,
    pub detuning_min_mhz: f64,
    pub detuning_max_mhz: f64,
    pub detuning_points: usize,
    pub t_max_ns: f64,
    pub t_step_ns: f64,
    /// Number of standing modes; the device value when absent.
    pub modes: Option<usize>,
    pub dt_max_ns: f64,
    pub noise: NoiseOverrides,
}

impl Default for RabiChevronParams {
    fn default() -> Self {
        RabiChevronParams {
            node: Node::A,
            coupling_mhz: 5.5,
            detuning_min_mhz: -250.0,
            detuning_max_mhz: 250.0,
            detuning_points: 201,
            t_max_ns: 300.0,
            t_step_ns: 2.0,
            modes: None,
            dt_max_ns: default_dt_ns(),
            noise: NoiseOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiSliceParams {
    pub node: Node,
    pub coupling_mhz: f64,
    pub detuning_mhz: f64,
    pub t_max_ns: f64,
    pub t_step_ns: f64,
    pub modes: Option<usize>,
    pub dt_max_ns: f64,
    pub noise: NoiseOverrides,
}

impl Default for RabiSliceParams {
    fn default() -> Self {
        RabiSliceParams {
            node: Node::A,
            coupling_mhz: 5.5,
            detuning_mhz: 0.0,
            t_max_ns: 200.0,
            t_step_ns: 0.5,
            modes: None,
            dt_max_ns: default_dt_ns(),
            noise: NoiseOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferExpParams {
    pub dw_a_mhz: f64,
    pub dw_b_mhz: f64,
    pub g_a_mhz: f64,
    pub g_b_mhz: f64,
    pub tau_ns: f64,
    pub delta_tau_ns: f64,
    /// Population samples are at most this far apart.
    pub sample_ns: f64,
    /// Readout without assignment errors (tomography only).
    pub ideal_readout: bool,
    pub dt_max_ns: f64,
    pub noise: NoiseOverrides,
}

impl TransferExpParams {
    fn from_core(p: TransferParams) -> Self {
        let to_mhz = |w: f64| w / (2.0 * PI * 1e6);
        TransferExpParams {
            dw_a_mhz: round9(to_mhz(p.dw_a)),
            dw_b_mhz: round9(to_mhz(p.dw_b)),
            g_a_mhz: round9(to_mhz(p.g_a)),
            g_b_mhz: round9(to_mhz(p.g_b)),
            tau_ns: round9(p.tau * 1e9),
            delta_tau_ns: round9(p.delta_tau * 1e9),
            sample_ns: 1.0,
            ideal_readout: false,
            dt_max_ns: default_dt_ns(),
            noise: NoiseOverrides::default(),
        }
    }

    fn to_core(&self) -> Result<TransferParams> {
        let p = TransferParams {
            dw_a: mhz(self.dw_a_mhz),
            dw_b: mhz(self.dw_b_mhz),
            g_a: mhz(self.g_a_mhz),
            g_b: mhz(self.g_b_mhz),
            tau: self.tau_ns * 1e-9,
            delta_tau: self.delta_tau_ns * 1e-9,
        };
        p.validate()?;
        if !(self.sample_ns > 0.0) {
            bail!("sample_ns must be positive");
        }
        Ok(p)
    }
}

fn round9(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

impl Default for TransferExpParams {
    fn default() -> Self {
        TransferExpParams::from_core(TransferParams::st())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhzPrepParams {
    pub cz_model: CzModel,
    /// Also run the calibrated pulse sequence through the master equation.
    pub pulse_level: bool,
    pub tomography: bool,
    pub dt_max_ns: f64,
    pub noise: NoiseOverrides,
}

impl Default for GhzPrepParams {
    fn default() -> Self {
        GhzPrepParams {
            cz_model: CzModel::Proxy,
            pulse_level: true,
            tomography: true,
            dt_max_ns: default_dt_ns(),
            noise: NoiseOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhzTransferParams {
    pub tomography: bool,
    pub dt_max_ns: f64,
    pub noise: NoiseOverrides,
}

impl Default for GhzTransferParams {
    fn default() -> Self {
        GhzTransferParams {
            tomography: true,
            dt_max_ns: default_dt_ns(),
            noise: NoiseOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub dt_max_ns: f64,
    pub noise: NoiseOverrides,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            dt_max_ns: default_dt_ns(),
            noise: NoiseOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CzTomoParams {
    pub node: Node,
    /// Edge qubit index, 1 or 3.
    pub edge: u8,
    pub dt_max_ns: f64,
    pub noise: NoiseOverrides,
}

impl Default for CzTomoParams {
    fn default() -> Self {
        CzTomoParams {
            node: Node::A,
            edge: 1,
            dt_max_ns: default_dt_ns(),
            noise: NoiseOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbParams {
    pub lengths: Vec<usize>,
    pub n_sequences: usize,
    pub error: ErrorChannelSpec,
}

impl Default for RbParams {
    fn default() -> Self {
        RbParams {
            lengths: vec![1, 5, 10, 20, 50, 100, 200, 400],
            n_sequences: 30,
            error: ErrorChannelSpec::Depolarizing { strength: 0.0052 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XebParams {
    pub cycles: Vec<usize>,
    pub n_circuits: usize,
    pub two_qubit_error: ErrorChannelSpec,
    pub single_qubit_error: ErrorChannelSpec,
}

impl Default for XebParams {
    fn default() -> Self {
        XebParams {
            cycles: vec![1, 2, 4, 6, 8, 12, 16, 20],
            n_circuits: 30,
            two_qubit_error: ErrorChannelSpec::Depolarizing { strength: 0.041 },
            single_qubit_error: ErrorChannelSpec::None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitWirebondParams {
    /// CSV `freq_hz,q_value`; synthetic samples from `truth` when absent.
    pub samples_csv: Option<String>,
    pub truth_r_s_ohm: f64,
    pub truth_q0: f64,
    pub mode_min: u32,
    pub mode_max: u32,
    /// Relative Gaussian noise on synthetic samples.
    pub noise_rel: f64,
}

impl Default for FitWirebondParams {
    fn default() -> Self {
        FitWirebondParams {
            samples_csv: None,
            truth_r_s_ohm: 0.38,
            truth_q0: 90.9e3,
            mode_min: 20,
            mode_max: 80,
            noise_rel: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCouplerParams {
    pub node: Node,
    /// CSV `delta_rad,g_mhz`; synthetic samples when absent.
    pub samples_csv: Option<String>,
    /// Junction inductance of the synthetic data; the device value when absent.
    pub truth_l_t_nh: Option<f64>,
    pub delta_min_rad: f64,
    pub delta_max_rad: f64,
    pub n_points: usize,
    pub noise_rel: f64,
    pub bounds_nh: [f64; 2],
}

impl Default for FitCouplerParams {
    fn default() -> Self {
        FitCouplerParams {
            node: Node::A,
            samples_csv: None,
            truth_l_t_nh: None,
            delta_min_rad: 0.55 * PI,
            delta_max_rad: PI,
            n_points: 19,
            noise_rel: 0.0,
            bounds_nh: [0.1, 3.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitLoadedT1Params {
    pub node: Node,
    /// CSV `delta_rad,t1_us`; synthetic samples when absent.
    pub samples_csv: Option<String>,
    pub truth_r_g_ohm: Option<f64>,
    pub delta_min_rad: f64,
    pub delta_max_rad: f64,
    pub n_points: usize,
    pub noise_rel: f64,
    pub bounds_ohm: [f64; 2],
    /// Coupling at which the loaded lifetime is reported.
    pub report_coupling_mhz: f64,
}

impl Default for FitLoadedT1Params {
    fn default() -> Self {
        FitLoadedT1Params {
            node: Node::A,
            samples_csv: None,
            truth_r_g_ohm: None,
            delta_min_rad: 0.6 * PI,
            delta_max_rad: PI,
            n_points: 17,
            noise_rel: 0.0,
            bounds_ohm: [0.01, 50.0],
            report_coupling_mhz: 5.5,
        }
    }
}

pub fn default_params(e: Experiment) -> Value {
    let v = match e {
        Experiment::RabiChevron => serde_json::to_value(RabiChevronParams::default()),
        Experiment::RabiSlice => serde_json::to_value(RabiSliceParams::default()),
        Experiment::Transfer | Experiment::TransferTomo => serde_json::to_value(TransferExpParams::default()),
        Experiment::BellStHalf => serde_json::to_value(TransferExpParams::from_core(TransferParams::st_half())),
        Experiment::GhzPrep => serde_json::to_value(GhzPrepParams::default()),
        Experiment::GhzTransfer => serde_json::to_value(GhzTransferParams::default()),
        Experiment::NetworkGhz => serde_json::to_value(NetworkParams::default()),
        Experiment::CzTomo => serde_json::to_value(CzTomoParams::default()),
        Experiment::Rb => serde_json::to_value(RbParams::default()),
        Experiment::Xeb => serde_json::to_value(XebParams::default()),
        Experiment::FitWirebond => serde_json::to_value(FitWirebondParams::default()),
        Experiment::FitCoupler => serde_json::to_value(FitCouplerParams::default()),
        Experiment::FitLoadedT1 => serde_json::to_value(FitLoadedT1Params::default()),
    };
    v.expect("default parameters serialize")
}

/// Type-check a parameter block without running anything.
pub fn check_params(e: Experiment, params: &Value) -> Result<()> {
    match e {
        Experiment::RabiChevron => parse::<RabiChevronParams>(params).map(drop),
        Experiment::RabiSlice => parse::<RabiSliceParams>(params).map(drop),
        Experiment::Transfer | Experiment::TransferTomo | Experiment::BellStHalf => {
            parse::<TransferExpParams>(params)?.to_core().map(drop)
        }
        Experiment::GhzPrep => parse::<GhzPrepParams>(params).map(drop),
        Experiment::GhzTransfer => parse::<GhzTransferParams>(params).map(drop),
        Experiment::NetworkGhz => parse::<NetworkParams>(params).map(drop),
        Experiment::CzTomo => parse::<CzTomoParams>(params).map(drop),
        Experiment::Rb => {
            let p: RbParams = parse(params)?;
            p.error.validate()?;
            Ok(())
        }
        Experiment::Xeb => {
            let p: XebParams = parse(params)?;
            p.two_qubit_error.validate()?;
            p.single_qubit_error.validate()?;
            Ok(())
        }
        Experiment::FitWirebond => parse::<FitWirebondParams>(params).map(drop),
        Experiment::FitCoupler => parse::<FitCouplerParams>(params).map(drop),
        Experiment::FitLoadedT1 => parse::<FitLoadedT1Params>(params).map(drop),
    }
}

pub fn run_point(e: Experiment, ctx: &PointContext) -> Result<PointOutput> {
    match e {
        Experiment::RabiChevron => rabi_chevron(ctx),
        Experiment::RabiSlice => rabi_slice(ctx),
        Experiment::Transfer => transfer(ctx),
        Experiment::TransferTomo => transfer_tomo(ctx),
        Experiment::GhzPrep => ghz_prep(ctx),
        Experiment::GhzTransfer => ghz_transfer(ctx),
        Experiment::BellStHalf => bell_st_half(ctx),
        Experiment::NetworkGhz => network_ghz(ctx),
        Experiment::CzTomo => cz_tomo(ctx),
        Experiment::Rb => rb(ctx),
        Experiment::Xeb => xeb(ctx),
        Experiment::FitWirebond => fit_wirebond(ctx),
        Experiment::FitCoupler => fit_coupler(ctx),
        Experiment::FitLoadedT1 => fit_loaded_t1(ctx),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Largest `|Tr ρ − 1|` and smallest eigenvalue over a trajectory.
pub fn trajectory_invariants(traj: &Trajectory) -> (f64, f64) {
    traj.states.iter().fold((0.0f64, f64::INFINITY), |(t, e), rho| {
        (t.max((rho.trace() - 1.0).abs()), e.min(min_eigenvalue(rho.matrix())))
    })
}

fn put_invariants(out: &mut PointOutput, traj: &Trajectory) {
    let (tr, ev) = trajectory_invariants(traj);
    out.put("max_trace_error", tr);
    out.put("min_eigenvalue", ev);
}

/// Split every frame into pieces no longer than `max_len` seconds.
pub fn subdivide(schedule: &PulseSchedule, max_len: f64) -> Result<PulseSchedule> {
    let mut items = Vec::new();
    for item in schedule.items() {
        match item {
            ScheduleItem::Frame(f) => {
                let n = (f.duration / max_len).ceil().max(1.0) as usize;
                for _ in 0..n {
                    let mut piece = f.clone();
                    piece.duration = f.duration / n as f64;
                    items.push(ScheduleItem::Frame(piece));
                }
            }
            other => items.push(other.clone()),
        }
    }
    Ok(PulseSchedule::new(items)?)
}

fn populations_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    traj.write_populations_csv(&mut buf)?;
    Ok(buf)
}

/// Cable qubit and `modes` standing modes with at most one excitation.
fn rabi_space(node: Node, modes: usize) -> Result<HilbertSpace> {
    let mut sites = vec![Site::qubit(node.qubit(2))];
    sites.extend((1..=modes).map(|m| Site::mode(qnetsim_core::device::mode_label(m), 1)));
    Ok(HilbertSpace::with_max_excitations(sites, 1)?)
}

fn rabi_device(device: &DeviceConfig, modes: Option<usize>) -> Result<DeviceConfig> {
    let mut d = device.clone();
    if let Some(m) = modes {
        if m % 2 == 0 || m == 0 {
            bail!("modes must be odd, got {m}");
        }
        let half = m / 2;
        let c = device.communication_mode - 1;
        if c < half || c + half >= device.mode_count {
            bail!(
                "modes {m} exceeds the {} modes around the communication mode",
                device.mode_count
            );
        }
        d.channel.mode_lifetimes_s = device.channel.mode_lifetimes_s[c - half..=c + half].to_vec();
        d.mode_count = m;
        d.communication_mode = m.div_ceil(2);
        d.validate()?;
    }
    Ok(d)
}

fn rabi_trajectory(
    device: &DeviceConfig,
    node: Node,
    g: f64,
    dw: f64,
    t_max: f64,
    t_step: f64,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let space = rabi_space(node, device.mode_count)?;
    let q = node.qubit(2);
    let mut frame = ControlFrame::new(t_step).detune(&q, dw).cable(node, g);
    if let Some(t1) = device.coupler_on_t1(node, g)? {
        frame = frame.t1(&q, t1);
    }
    let n = (t_max / t_step).round().max(1.0) as usize;
    let schedule = PulseSchedule::new(vec![ScheduleItem::Frame(frame); n])?;
    let psi = space.basis_vector(&[(q.as_str(), 1)])?;
    let rho0 = DensityMatrix::from_pure(space, &psi)?;
    Ok(evolve_master_equation(&rho0, &schedule, device, opts)?)
}

/// Vertex of the parabola through three equally spaced samples.
fn parabolic_vertex(x: &[f64], y: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= y.len() {
        return x[i];
    }
    let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
    let den = a - 2.0 * b + c;
    if den.abs() < 1e-300 {
        return x[i];
    }
    x[i] + 0.5 * (a - c) / den * (x[i + 1] - x[i])
}

fn readout_confusion(device: &DeviceConfig, labels: &[&str], ideal: bool) -> Result<Vec<ConfusionMatrix>> {
    labels
        .iter()
        .map(|l| {
            if ideal {
                return Ok(ConfusionMatrix::ideal());
            }
            let q = device.qubit(l)?;
            Ok(ConfusionMatrix::new(q.readout_fg, q.readout_fe)?)
        })
        .collect()
}

/// Full state tomography of `rho` with simulated shots; returns the
/// estimate, the largest clipped mitigation mass and the raw records.
fn shot_tomography(
    rho: &DensityMatrix,
    confusion: &[ConfusionMatrix],
    shots: u64,
    seed: u64,
) -> Result<(DensityMatrix, f64, Vec<ShotRecord>)> {
    let k = confusion.len();
    let settings = tomography::all_settings(k);
    let records = settings
        .iter()
        .enumerate()
        .map(|(i, s)| tomography::simulate_readout(rho, i, s, confusion, shots, derive_seed(seed, i as u64)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (est, deficit) = tomography::reconstruct_from_records(k, &records, confusion)?;
    Ok((est, deficit, records))
}

fn records_csv(records: &[ShotRecord], k: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    tomography::write_records_csv(records, &tomography::all_settings(k), &mut buf)?;
    Ok(buf)
}

fn qubit_density(k: usize, m: qnetsim_core::hilbert::CMatrix) -> Result<DensityMatrix> {
    Ok(DensityMatrix::from_projected(HilbertSpace::qubits(k)?, &m)?)
}

fn ghz_fidelity(rho: &DensityMatrix, k: usize) -> Result<f64> {
    let mut psi = qnetsim_core::hilbert::CVector::zeros(1 << k);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    psi[0] = h.into();
    psi[(1 << k) - 1] = h.into();
    Ok(qnetsim_core::hilbert::state_fidelity(rho, &psi)?)
}

fn synthetic_noise(seed: u64, rel: f64) -> Result<impl FnMut(f64) -> f64> {
    if !(rel >= 0.0 && rel.is_finite()) {
        bail!("noise_rel must be a nonnegative number");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, rel.max(f64::MIN_POSITIVE))?;
    Ok(move |v: f64| {
        if rel == 0.0 {
            v
        } else {
            v * (1.0 + normal.sample(&mut rng))
        }
    })
}

fn read_pairs(ctx: &PointContext, rel: &str, columns: [&str; 2]) -> Result<Vec<(f64, f64)>> {
    let path = ctx.source_dir.join(rel);
    let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != columns {
        bail!("{}: expected header `{}`", path.display(), columns.join(","));
    }
    rdr.records()
        .map(|r| {
            let r = r?;
            let a: f64 = r[0].trim().parse().with_context(|| format!("bad number `{}`", &r[0]))?;
            let b: f64 = r[1].trim().parse().with_context(|| format!("bad number `{}`", &r[1]))?;
            Ok((a, b))
        })
        .collect()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

// ---------------------------------------------------------------------------
// Vacuum Rabi
// ---------------------------------------------------------------------------

fn rabi_chevron(ctx: &PointContext) -> Result<PointOutput> {
    let p: RabiChevronParams = parse(ctx.params)?;
    if p.detuning_points < 3 || !(p.t_step_ns > 0.0 && p.t_max_ns >= p.t_step_ns) {
        bail!("need at least 3 detunings and 0 < t_step_ns <= t_max_ns");
    }
    let device = rabi_device(ctx.device, p.modes)?;
    let opts = options(p.dt_max_ns, &p.noise)?;
    let q = p.node.qubit(2);
    let detunings = linspace(p.detuning_min_mhz, p.detuning_max_mhz, p.detuning_points);
    let mut rows = Vec::new();
    let mut mean_pop = Vec::with_capacity(detunings.len());
    let (mut max_tr, mut min_ev) = (0.0f64, f64::INFINITY);
    for d in &detunings {
        let traj = rabi_trajectory(
            &device,
            p.node,
            mhz(p.coupling_mhz),
            mhz(*d),
            p.t_max_ns * 1e-9,
            p.t_step_ns * 1e-9,
            &opts,
        )?;
        let (tr, ev) = trajectory_invariants(&traj);
        max_tr = max_tr.max(tr);
        min_ev = min_ev.min(ev);
        let pops = &traj.populations[&q];
        for (t, v) in traj.times.iter().zip(pops) {
            rows.push(vec![num(*d), format!("{:.6}", t * 1e9), num(*v)]);
        }
        mean_pop.push(pops.iter().sum::<f64>() / pops.len() as f64);
    }
    // resonances are dips of the time-averaged qubit population
    let mut resonances = Vec::new();
    for i in 1..mean_pop.len() - 1 {
        if mean_pop[i] < mean_pop[i - 1] && mean_pop[i] <= mean_pop[i + 1] && mean_pop[i] < 0.8 {
            resonances.push(parabolic_vertex(&detunings, &mean_pop, i));
        }
    }
    let fsr = if resonances.len() >= 2 {
        (resonances[resonances.len() - 1] - resonances[0]) / (resonances.len() - 1) as f64
    } else {
        f64::NAN
    };
    let mut out = PointOutput::default();
    out.csv("chevron.csv", &["detuning_mhz", "time_ns", "qubit_population"], rows)?;
    out.put("resonances_mhz", &resonances);
    out.put("fsr_estimate_mhz", fsr);
    out.put("mode_count", device.mode_count);
    out.put("max_trace_error", max_tr);
    out.put("min_eigenvalue", min_ev);
    Ok(out)
}

fn rabi_slice(ctx: &PointContext) -> Result<PointOutput> {
    let p: RabiSliceParams = parse(ctx.params)?;
    if !(p.t_step_ns > 0.0 && p.t_max_ns >= p.t_step_ns) {
        bail!("need 0 < t_step_ns <= t_max_ns");
    }
    let device = rabi_device(ctx.device, p.modes)?;
    let opts = options(p.dt_max_ns, &p.noise)?;
    let g = mhz(p.coupling_mhz);
    let traj = rabi_trajectory(
        &device,
        p.node,
        g,
        mhz(p.detuning_mhz),
        p.t_max_ns * 1e-9,
        p.t_step_ns * 1e-9,
        &opts,
    )?;
    let pops = &traj.populations[&p.node.qubit(2)];
    let times_ns: Vec<f64> = traj.times.iter().map(|t| t * 1e9).collect();
    let mut rows = Vec::new();
    let mut dev: f64 = 0.0;
    for (t, v) in traj.times.iter().zip(pops) {
        let a = (g * t).cos().powi(2);
        dev = dev.max((v - a).abs());
        rows.push(vec![format!("{:.6}", t * 1e9), num(*v), num(a)]);
    }
    let first = (1..pops.len() - 1).find(|&i| pops[i] < pops[i - 1] && pops[i] <= pops[i + 1]);
    let mut out = PointOutput::default();
    out.csv("rabi.csv", &["time_ns", "qubit_population", "cos2_gt"], rows)?;
    out.put(
        "first_swap_ns",
        first.map(|i| parabolic_vertex(&times_ns, pops, i)).unwrap_or(f64::NAN),
    );
    out.put("first_swap_population", first.map(|i| pops[i]).unwrap_or(f64::NAN));
    out.put("analytic_first_swap_ns", PI / (2.0 * g) * 1e9);
    out.put("cos2_max_deviation", dev);
    out.put("mode_count", device.mode_count);
    put_invariants(&mut out, &traj);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Cable transfers
// ---------------------------------------------------------------------------

/// Trajectory of `|e⟩` on `Q2A` through the transfer, finely sampled.
fn transfer_trajectory(
    params: &TransferParams,
    device: &DeviceConfig,
    sample_ns: f64,
    opts: &EvolveOptions,
) -> Result<(PulseSchedule, Trajectory)> {
    let schedule = protocols::schedule_state_transfer(params, device)?;
    let space = pipeline::transfer_space(device)?;
    let psi = space.basis_vector(&[("Q2A", 1)])?;
    let rho0 = DensityMatrix::from_pure(space, &psi)?;
    let fine = subdivide(&schedule, sample_ns * 1e-9)?;
    let traj = evolve_master_equation(&rho0, &fine, device, opts)?;
    Ok((schedule, traj))
}

fn transfer_common(
    out: &mut PointOutput,
    p: &TransferExpParams,
    device: &DeviceConfig,
    half: bool,
) -> Result<TransferMap> {
    let params = p.to_core()?;
    let opts = options(p.dt_max_ns, &p.noise)?;
    let (schedule, traj) = transfer_trajectory(&params, device, p.sample_ns, &opts)?;
    let map = pipeline::simulate_cable_transfer(&params, half, device, &opts)?;
    out.raw("populations.csv", populations_csv(&traj)?);
    let mut dump = Vec::new();
    traj.write_state_dump(&mut dump)?;
    out.raw("final_state.bin", dump);
    out.json("schedule.json", protocols::schedule_to_json(&schedule))?;
    out.put("duration_ns", schedule.duration() * 1e9);
    out.put("receiver_population", *traj.populations["Q2B"].last().expect("sampled"));
    out.put("source_population", *traj.populations["Q2A"].last().expect("sampled"));
    out.put("efficiency", map.efficiency());
    out.put("coherence", map.coherence());
    out.put("phase_correction_rad", map.phase_correction);
    for (node, g) in [(Node::A, params.g_a), (Node::B, params.g_b)] {
        let t1 = device
            .coupler_on_t1(node, g)?
            .unwrap_or(device.qubit(&node.qubit(2))?.t1_s);
        out.put(&format!("loaded_t1_{}_us", node.as_str().to_lowercase()), t1 * 1e6);
    }
    put_invariants(out, &traj);
    Ok(map)
}

fn transfer(ctx: &PointContext) -> Result<PointOutput> {
    let p: TransferExpParams = parse(ctx.params)?;
    let mut out = PointOutput::default();
    let map = transfer_common(&mut out, &p, ctx.device, false)?;
    let chi = map.process()?;
    out.put("process_fidelity", map.process_fidelity()?);
    out.json("chi.json", tomography::matrix_to_json(chi.chi()))?;
    Ok(out)
}

fn transfer_tomo(ctx: &PointContext) -> Result<PointOutput> {
    let p: TransferExpParams = parse(ctx.params)?;
    let params = p.to_core()?;
    let opts = options(p.dt_max_ns, &p.noise)?;
    let map = pipeline::simulate_cable_transfer(&params, false, ctx.device, &opts)?;
    let shots = ctx.shots.unwrap_or(DEFAULT_SHOTS);
    let confusion = readout_confusion(ctx.device, &["Q2B"], p.ideal_readout)?;
    let inputs = tomography::process_input_densities(1)?;
    let labels = ["g", "minus_i", "plus", "e"];
    let mut out = PointOutput::default();
    let mut estimates = Vec::new();
    let mut deficit: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let rho = qubit_density(1, map.output_dst(input))?;
        let (est, d, records) = shot_tomography(&rho, &confusion, shots, derive_seed(ctx.seed, k as u64))?;
        deficit = deficit.max(d);
        out.raw(&format!("shots_{}.csv", labels[k]), records_csv(&records, 1)?);
        estimates.push(est.into_matrix());
    }
    let chi = tomography::reconstruct_process(&inputs, &estimates)?;
    let ideal = qnetsim_core::ProcessMatrix::identity(1)?;
    out.put(
        "process_fidelity",
        qnetsim_core::hilbert::process_fidelity(&chi, &ideal)?,
    );
    out.put("exact_process_fidelity", map.process_fidelity()?);
    out.put("efficiency", map.efficiency());
    out.put("max_l1_deficit", deficit);
    out.put("shots", shots);
    out.json("chi.json", tomography::matrix_to_json(chi.chi()))?;
    Ok(out)
}

fn bell_st_half(ctx: &PointContext) -> Result<PointOutput> {
    let p: TransferExpParams = parse(ctx.params)?;
    let mut out = PointOutput::default();
    let map = transfer_common(&mut out, &p, ctx.device, true)?;
    let mut e = qnetsim_core::hilbert::CMatrix::zeros(2, 2);
    e[(1, 1)] = 1.0.into();
    out.put("bell_fidelity", map.bell_fidelity());
    out.json("rho_pair.json", tomography::matrix_to_json(&map.output_pair(&e)))?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Multi-qubit protocols
// ---------------------------------------------------------------------------

fn node_tomography(out: &mut PointOutput, ctx: &PointContext, reg: &Register, keep: &[&str], tag: &str) -> Result<()> {
    let rho = qubit_density(keep.len(), reg.reduced(keep)?)?;
    let shots = ctx.shots.unwrap_or(DEFAULT_SHOTS);
    let confusion = readout_confusion(ctx.device, keep, false)?;
    let (est, deficit, records) = shot_tomography(&rho, &confusion, shots, ctx.seed)?;
    out.put("tomography_fidelity", ghz_fidelity(&est, keep.len())?);
    out.put("max_l1_deficit", deficit);
    out.put("shots", shots);
    out.raw(&format!("shots_{tag}.csv"), records_csv(&records, keep.len())?);
    out.json(&format!("rho_{tag}.json"), tomography::matrix_to_json(est.matrix()))?;
    Ok(())
}

fn ghz_prep(ctx: &PointContext) -> Result<PointOutput> {
    let p: GhzPrepParams = parse(ctx.params)?;
    let opts = options(p.dt_max_ns, &p.noise)?;
    let models = StepModels {
        cz: p.cz_model,
        idle: true,
        ..StepModels::ideal()
    };
    let reg = pipeline::ghz_prep_register(&models, ctx.device)?;
    let mut out = PointOutput::default();
    out.put("ghz_fidelity", reg.ghz_fidelity(&REGISTER[..3])?);
    if p.pulse_level {
        out.put(
            "pulse_level_fidelity",
            pipeline::simulate_ghz_prep_pulse(Node::A, ctx.device, &opts)?,
        );
    }
    if p.tomography {
        node_tomography(&mut out, ctx, &reg, &REGISTER[..3], "a")?;
    }
    out.json("steps.json", protocols::ghz_prep_steps(Node::A))?;
    Ok(out)
}

fn ghz_transfer(ctx: &PointContext) -> Result<PointOutput> {
    let p: GhzTransferParams = parse(ctx.params)?;
    let opts = options(p.dt_max_ns, &p.noise)?;
    let prep_steps = protocols::ghz_prep_steps(Node::A);
    let steps = protocols::schedule_ghz_transfer(ctx.device);
    let prep = StepModels::simulated(&prep_steps, ctx.device, &opts)?;
    let models = StepModels::simulated(&steps, ctx.device, &opts)?;
    let mut reg = pipeline::ghz_prep_register(&prep, ctx.device)?;
    let mut out = PointOutput::default();
    out.put("prep_fidelity", reg.ghz_fidelity(&REGISTER[..3])?);
    pipeline::execute(&mut reg, &steps, &models, ctx.device)?;
    out.put("transfer_fidelity", reg.ghz_fidelity(&REGISTER[3..])?);
    if let Some(st) = &models.st {
        out.put("st_efficiency", st.efficiency());
        out.put("st_process_fidelity", st.process_fidelity()?);
    }
    let iswaps: Map<String, Value> = models
        .iswaps
        .iter()
        .map(|((a, b), m)| (format!("{a}->{b}"), json!(m.efficiency())))
        .collect();
    out.put("iswap_efficiencies", iswaps);
    if p.tomography {
        node_tomography(&mut out, ctx, &reg, &REGISTER[3..], "b")?;
    }
    out.json("steps.json", &steps)?;
    Ok(out)
}

fn network_ghz(ctx: &PointContext) -> Result<PointOutput> {
    let p: NetworkParams = parse(ctx.params)?;
    let opts = options(p.dt_max_ns, &p.noise)?;
    let steps = pipeline::network_steps(ctx.device);
    let models = StepModels::simulated(&steps, ctx.device, &opts)?;
    let r = pipeline::network_pipeline(&models, ctx.device)?;
    let mut out = PointOutput::default();
    out.put("bell_fidelity", r.bell);
    out.put("ghz4_fidelity", r.ghz4);
    out.put("ghz6_fidelity", r.ghz6);
    let counts: Map<String, Value> = ProtocolStep::count_kinds(&steps)
        .into_iter()
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    out.put("step_counts", counts);
    out.json("steps.json", protocols::schedule_network_ghz(ctx.device))?;
    Ok(out)
}

fn cz_tomo(ctx: &PointContext) -> Result<PointOutput> {
    let p: CzTomoParams = parse(ctx.params)?;
    let opts = options(p.dt_max_ns, &p.noise)?;
    let proc = pipeline::simulate_cz_process(p.node, p.edge, ctx.device, &opts)?;
    let lossless = pipeline::calibrate_cz(p.node, p.edge, ctx.device, opts.dt_max, false)?;
    let mut out = PointOutput::default();
    out.put("process_fidelity", proc.fidelity);
    out.put("leakage", proc.leakage);
    out.put("conditional_phase_rad", proc.calibration.conditional_phase);
    out.put("corrected_phases_rad", proc.calibration.corrected_phases);
    out.put("lossless_phase_error_rad", lossless.phase_error());
    out.put("correction", proc.calibration.correction);
    out.put("cz_duration_ns", protocols::cz_duration(ctx.device) * 1e9);
    out.put("iswap_duration_ns", protocols::iswap_duration(ctx.device) * 1e9);
    out.json("chi.json", tomography::matrix_to_json(proc.chi.chi()))?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Benchmarking
// ---------------------------------------------------------------------------

fn rb(ctx: &PointContext) -> Result<PointOutput> {
    let p: RbParams = parse(ctx.params)?;
    let cfg = RbConfig {
        lengths: p.lengths,
        n_sequences: p.n_sequences,
        error: p.error,
        seed: ctx.seed,
        shots: ctx.shots,
    };
    let r = benchmarking::rb_run(&cfg)?;
    let mut out = PointOutput::default();
    let mut buf = Vec::new();
    benchmarking::write_rb_csv(&r, &mut buf)?;
    out.raw("rb.csv", buf);
    out.json("fit.json", r.fit)?;
    out.put("p", r.fit.p);
    out.put("error_per_clifford", r.error_per_clifford);
    out.put("average_gate_fidelity", r.average_gate_fidelity);
    out.put(
        "injected_average_fidelity",
        1.0 - (1.0 - p.error.polarization(1)?) / 2.0,
    );
    Ok(out)
}

fn xeb(ctx: &PointContext) -> Result<PointOutput> {
    let p: XebParams = parse(ctx.params)?;
    let cfg = XebConfig {
        cycles: p.cycles,
        n_circuits: p.n_circuits,
        two_qubit_error: p.two_qubit_error,
        single_qubit_error: p.single_qubit_error,
        seed: ctx.seed,
    };
    let r = benchmarking::xeb_run(&cfg)?;
    let mut out = PointOutput::default();
    let mut buf = Vec::new();
    benchmarking::write_xeb_csv(&r, &mut buf)?;
    out.raw("xeb.csv", buf);
    out.json("fit.json", r.fit)?;
    out.put("p_cycle", r.fit.p);
    out.put("cycle_error", r.cycle_error);
    out.put("two_qubit_error_estimate", r.two_qubit_error_estimate);
    out.put("injected_two_qubit_error", 1.0 - p.two_qubit_error.polarization(2)?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Circuit fits
// ---------------------------------------------------------------------------

fn fit_wirebond(ctx: &PointContext) -> Result<PointOutput> {
    let p: FitWirebondParams = parse(ctx.params)?;
    let cfg = &ctx.device.channel;
    let l_m = ctx.device.mode_inductance();
    let samples: Vec<QSample> = match &p.samples_csv {
        Some(rel) => {
            let path = ctx.source_dir.join(rel);
            let f = std::fs::File::open(&path).with_context(|| format!("reading {}", path.display()))?;
            circuit::read_q_samples(f)?
        }
        None => {
            if p.mode_min < 1 || p.mode_max < p.mode_min {
                bail!("need 1 <= mode_min <= mode_max");
            }
            let truth = qnetsim_core::WirebondLossModel {
                r_s_ohm: p.truth_r_s_ohm,
                q0: p.truth_q0,
            };
            let mut noise = synthetic_noise(ctx.seed, p.noise_rel)?;
            (p.mode_min..=p.mode_max)
                .map(|m| {
                    let mp = circuit::standing_mode_params(cfg, ctx.device.fsr_hz, m)?;
                    let q = circuit::channel_mode_q(mp.omega_m, &truth, l_m, cfg);
                    Ok(QSample {
                        omega_m: mp.omega_m,
                        q: noise(q),
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let fit = circuit::fit_wirebond_loss(&samples, cfg, l_m)?;
    let mut out = PointOutput::default();
    let rows = samples
        .iter()
        .map(|s| {
            vec![
                num(s.omega_m / (2.0 * PI)),
                num(s.q),
                num(circuit::channel_mode_q(s.omega_m, &fit.model, l_m, cfg)),
            ]
        })
        .collect();
    out.csv("samples.csv", &["freq_hz", "q_value", "q_fit"], rows)?;
    out.put("r_s_ohm", fit.model.r_s_ohm);
    out.put("q0", fit.model.q0);
    out.put("residual_norm", fit.residual_norm);
    out.put("l_m_nh", l_m * 1e9);
    if p.samples_csv.is_none() {
        out.put("r_s_rel_error", (fit.model.r_s_ohm / p.truth_r_s_ohm - 1.0).abs());
        out.put("q0_rel_error", (fit.model.q0 / p.truth_q0 - 1.0).abs());
    }
    Ok(out)
}

fn fit_coupler(ctx: &PointContext) -> Result<PointOutput> {
    let p: FitCouplerParams = parse(ctx.params)?;
    let ctx0 = ctx.device.coupling_context(p.node)?;
    let samples: Vec<(f64, f64)> = match &p.samples_csv {
        Some(rel) => read_pairs(ctx, rel, ["delta_rad", "g_mhz"])?
            .into_iter()
            .map(|(d, g)| (d, mhz(g)))
            .collect(),
        None => {
            let truth = ctx0.with_lt(p.truth_l_t_nh.map_or(ctx0.coupler.l_t_h, |v| v * 1e-9));
            let mut noise = synthetic_noise(ctx.seed, p.noise_rel)?;
            linspace(p.delta_min_rad, p.delta_max_rad, p.n_points)
                .into_iter()
                .map(|d| (d, noise(truth.g(d))))
                .collect()
        }
    };
    let fit = circuit::fit_coupler_lt(&samples, &ctx0, (p.bounds_nh[0] * 1e-9, p.bounds_nh[1] * 1e-9))?;
    let fitted = ctx0.with_lt(fit.value);
    let to_mhz = |g: f64| g / (2.0 * PI * 1e6);
    let rows = samples
        .iter()
        .map(|(d, g)| vec![num(*d), num(to_mhz(*g)), num(to_mhz(fitted.g(*d)))])
        .collect();
    let mut out = PointOutput::default();
    out.csv("samples.csv", &["delta_rad", "g_mhz", "g_fit_mhz"], rows)?;
    out.put("l_t_nh", fit.value * 1e9);
    out.put("residual_norm_mhz", to_mhz(fit.residual_norm));
    out.put("g_max_mhz", to_mhz(fitted.g_max()).abs());
    out.put("g_half_pi_mhz", to_mhz(fitted.g(PI / 2.0)));
    out.put("l_m_nh", ctx0.l_m * 1e9);
    Ok(out)
}

fn fit_loaded_t1(ctx: &PointContext) -> Result<PointOutput> {
    let p: FitLoadedT1Params = parse(ctx.params)?;
    let device = ctx.device;
    let label = p.node.qubit(2);
    let qubit = device.qubit(&label)?;
    let coupler = *device.coupler(p.node);
    let omega = device.omega_comm();
    let samples: Vec<(f64, f64)> = match &p.samples_csv {
        Some(rel) => read_pairs(ctx, rel, ["delta_rad", "t1_us"])?
            .into_iter()
            .map(|(d, t)| (d, t * 1e-6))
            .collect(),
        None => {
            let mut truth = coupler;
            if let Some(r) = p.truth_r_g_ohm {
                truth.r_g_ohm = r;
            }
            let mut noise = synthetic_noise(ctx.seed, p.noise_rel)?;
            linspace(p.delta_min_rad, p.delta_max_rad, p.n_points)
                .into_iter()
                .map(|d| {
                    Ok((
                        d,
                        noise(circuit::qubit_loaded_t1(d, omega, qubit, &truth, &device.channel)?),
                    ))
                })
                .collect::<Result<_>>()?
        }
    };
    let fit = circuit::fit_loaded_t1_rg(
        &samples,
        omega,
        qubit,
        &coupler,
        &device.channel,
        (p.bounds_ohm[0], p.bounds_ohm[1]),
    )?;
    let mut fitted_device = device.clone();
    fitted_device
        .couplers
        .get_mut(&p.node)
        .ok_or_else(|| anyhow!("no coupler on node {}", p.node))?
        .r_g_ohm = fit.value;
    let mut fitted = coupler;
    fitted.r_g_ohm = fit.value;
    let rows = samples
        .iter()
        .map(|(d, t)| {
            let model = circuit::qubit_loaded_t1(*d, omega, qubit, &fitted, &device.channel)?;
            Ok(vec![num(*d), num(t * 1e6), num(model * 1e6)])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = PointOutput::default();
    out.csv("samples.csv", &["delta_rad", "t1_us", "t1_fit_us"], rows)?;
    out.put("r_g_ohm", fit.value);
    out.put("residual_norm", fit.residual_norm);
    out.put(
        "loaded_t1_us",
        fitted_device.loaded_t1_at(p.node, mhz(p.report_coupling_mhz))? * 1e6,
    );
    Ok(out)
}
