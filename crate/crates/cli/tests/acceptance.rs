//! Acceptance criteria. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line regardless of output capture.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use qnetsim_cli::runner;
use qnetsim_cli::Scenario;
use qnetsim_core::dynamics::EvolveOptions;
use qnetsim_core::hilbert::{max_abs, state_fidelity, CMatrix, CVector, C64};
use qnetsim_core::pipeline::{simulate_cable_transfer, simulate_cz_process};
use qnetsim_core::protocols::{cz_duration, iswap_duration, TransferParams};
use qnetsim_core::tomography::{self, ConfusionMatrix};
use qnetsim_core::{DensityMatrix, DeviceConfig, HilbertSpace, Node};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{Map, Value};

type Check = fn() -> Result<(bool, String)>;

fn results(scenario: &str) -> Result<Map<String, Value>> {
    let sc = Scenario::parse(scenario, Path::new("."))?;
    let (summary, _) = runner::compute(&sc, sc.spec.seed, 1)?;
    summary["points"][0]["results"]
        .as_object()
        .cloned()
        .ok_or_else(|| anyhow!("no results"))
}

fn get(r: &Map<String, Value>, key: &str) -> Result<f64> {
    r.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| anyhow!("missing result `{key}`"))
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

fn st_transfer() -> Result<(bool, String)> {
    let (r, secs) = timed(|| results(r#"{"experiment": "transfer"}"#))?;
    let eta = get(&r, "receiver_population")?;
    let fp = get(&r, "process_fidelity")?;
    let ok = (0.86..=0.90).contains(&eta) && within(fp, 0.920, 0.015) && secs < 30.0;
    Ok((
        ok,
        format!("receiver {eta:.4} in [0.86, 0.90], process {fp:.4} vs 0.920 +- 0.015, {secs:.1} s < 30 s"),
    ))
}

fn bell_half() -> Result<(bool, String)> {
    let (r, secs) = timed(|| results(r#"{"experiment": "bell-st-half"}"#))?;
    let f = get(&r, "bell_fidelity")?;
    let ok = within(f, 0.915, 0.02) && secs < 30.0;
    Ok((ok, format!("Bell {f:.4} vs 0.915 +- 0.02, {secs:.1} s < 30 s")))
}

fn ghz_pipeline() -> Result<(bool, String)> {
    let (r, secs) = timed(|| results(r#"{"experiment": "ghz-transfer", "params": {"tomography": false}}"#))?;
    let prep = get(&r, "prep_fidelity")?;
    let tr = get(&r, "transfer_fidelity")?;
    let ok = (0.91..=0.96).contains(&prep) && within(tr, 0.648, 0.04) && secs < 120.0;
    Ok((
        ok,
        format!("prep {prep:.4} in [0.91, 0.96], transfer {tr:.4} vs 0.648 +- 0.04, {secs:.1} s < 120 s"),
    ))
}

fn network_ghz() -> Result<(bool, String)> {
    let (r, secs) = timed(|| results(r#"{"experiment": "network-ghz"}"#))?;
    let g4 = get(&r, "ghz4_fidelity")?;
    let g6 = get(&r, "ghz6_fidelity")?;
    let ok = within(g4, 0.829, 0.04) && within(g6, 0.738, 0.04) && secs < 120.0;
    Ok((
        ok,
        format!("four-qubit {g4:.4} vs 0.829 +- 0.04, six-qubit {g6:.4} vs 0.738 +- 0.04, {secs:.1} s < 120 s"),
    ))
}

fn circuit_model() -> Result<(bool, String)> {
    let d = DeviceConfig::default();
    let l_m = d.mode_inductance() * 1e9;
    let ctx = d.coupling_context(Node::A)?.with_lt(0.620e-9);
    let g_max = ctx.g(PI).abs() / (2.0 * PI * 1e6);
    let g_half = ctx.g(PI / 2.0);
    let ok = format!("{l_m:.0}") == "121" && within(g_max, 29.0, 1.0) && g_half == 0.0;
    Ok((
        ok,
        format!("L_m {l_m:.3} nH (121 at 3 s.f.), |g_max|/2pi {g_max:.3} MHz vs 29 +- 1, g(pi/2) = {g_half}"),
    ))
}

fn wirebond_fit() -> Result<(bool, String)> {
    let r = results(r#"{"experiment": "fit-wirebond"}"#)?;
    let (rs, q0) = (get(&r, "r_s_ohm")?, get(&r, "q0")?);
    let (ers, eq) = ((rs / 0.38 - 1.0).abs(), (q0 / 90.9e3 - 1.0).abs());
    let ok = ers < 1e-3 && eq < 1e-3;
    Ok((
        ok,
        format!("R_s {rs:.6} ohm (rel {ers:.1e}), Q_0 {q0:.2} (rel {eq:.1e}), both < 1e-3"),
    ))
}

fn gate_timings() -> Result<(bool, String)> {
    let d = DeviceConfig::default();
    let (ts, tc) = (iswap_duration(&d) * 1e9, cz_duration(&d) * 1e9);
    let r = results(r#"{"experiment": "cz-tomo", "params": {"noise": {"lossless": true}}}"#)?;
    let err = get(&r, "lossless_phase_error_rad")?;
    let ok = format!("{ts:.1}") == "15.0" && format!("{tc:.1}") == "21.2" && err < 1e-3;
    Ok((
        ok,
        format!("iSWAP {ts:.3} ns, CZ {tc:.3} ns, lossless phase pattern error {err:.2e} < 1e-3"),
    ))
}

fn rabi_oracle() -> Result<(bool, String)> {
    let r = results(r#"{"experiment": "rabi-slice", "params": {"modes": 1, "noise": {"lossless": true}}}"#)?;
    let dev = get(&r, "cos2_max_deviation")?;
    let swap = get(&r, "first_swap_ns")?;
    let ok = dev < 1e-6 && within(swap, 45.45, 0.05);
    Ok((
        ok,
        format!("max |P - cos^2(gt)| {dev:.2e} < 1e-6, first swap {swap:.3} ns"),
    ))
}

fn fidelity_shift(dt: f64, f: impl Fn(&EvolveOptions) -> Result<f64>) -> Result<f64> {
    let coarse = EvolveOptions {
        dt_max: dt,
        ..EvolveOptions::default()
    };
    let fine = EvolveOptions {
        dt_max: dt / 2.0,
        ..EvolveOptions::default()
    };
    Ok((f(&coarse)? - f(&fine)?).abs())
}

fn solver_invariants() -> Result<(bool, String)> {
    let mut worst_trace: f64 = 0.0;
    let mut worst_eig = f64::INFINITY;
    for s in [
        r#"{"experiment": "rabi-chevron"}"#,
        r#"{"experiment": "rabi-slice"}"#,
        r#"{"experiment": "transfer"}"#,
        r#"{"experiment": "bell-st-half"}"#,
    ] {
        let r = results(s)?;
        worst_trace = worst_trace.max(get(&r, "max_trace_error")?);
        worst_eig = worst_eig.min(get(&r, "min_eigenvalue")?);
    }
    let d = DeviceConfig::default();
    let st = fidelity_shift(1e-11, |o| {
        Ok(simulate_cable_transfer(&TransferParams::st(), false, &d, o)?.process_fidelity()?)
    })?;
    let bell = fidelity_shift(1e-11, |o| {
        Ok(simulate_cable_transfer(&TransferParams::st_half(), true, &d, o)?.bell_fidelity())
    })?;
    let cz = fidelity_shift(1e-11, |o| Ok(simulate_cz_process(Node::A, 1, &d, o)?.fidelity))?;
    let shift = st.max(bell).max(cz);
    let ok = worst_trace < 1e-6 && worst_eig > -1e-6 && shift < 1e-7;
    Ok((
        ok,
        format!("max |Tr - 1| {worst_trace:.1e}, min eigenvalue {worst_eig:.1e}, dt-halving shift {shift:.1e} < 1e-7"),
    ))
}

fn random_pure(dim: usize, rng: &mut ChaCha8Rng) -> CVector {
    let v = CVector::from_fn(dim, |_, _| {
        C64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng))
    });
    let n = v.norm();
    v / C64::new(n, 0.0)
}

fn tomography_round_trip() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 1.0;
    let mut worst_mixed: f64 = 0.0;
    for i in 0..200 {
        let k = 1 + i % 3;
        let space = HilbertSpace::qubits(k)?;
        let ideal = vec![ConfusionMatrix::ideal(); k];
        let settings = tomography::all_settings(k);
        let recon = |rho: &DensityMatrix| -> Result<DensityMatrix> {
            let probs = settings
                .iter()
                .map(|s| tomography::readout_probabilities(rho, s, &ideal))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(tomography::reconstruct_density(k, &probs)?)
        };
        let psi = random_pure(1 << k, &mut rng);
        let est = recon(&DensityMatrix::from_pure(space.clone(), &psi)?)?;
        worst = worst.min(state_fidelity(&est, &psi)?);
        let mixed: CMatrix = tomography::random_density(k, 1 + i % (1 << k), &mut rng);
        let est = recon(&DensityMatrix::new(space, mixed.clone())?)?;
        worst_mixed = worst_mixed.max(max_abs(&(est.matrix() - &mixed)));
    }
    let d = DeviceConfig::default();
    let labels = ["Q1A", "Q2A", "Q3A"];
    let confusion = labels
        .iter()
        .map(|l| {
            let q = d.qubit(l)?;
            Ok(ConfusionMatrix::new(q.readout_fg, q.readout_fe)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ghz = CVector::zeros(8);
    ghz[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    ghz[7] = ghz[0];
    let rho = DensityMatrix::from_pure(HilbertSpace::qubits(3)?, &ghz)?;
    let settings = tomography::all_settings(3);
    let mut fids = Vec::new();
    for seed in 0..100u64 {
        let records = settings
            .iter()
            .enumerate()
            .map(|(i, s)| tomography::simulate_readout(&rho, i, s, &confusion, 3000, seed * 1000 + i as u64))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let (est, _) = tomography::reconstruct_from_records(3, &records, &confusion)?;
        fids.push(state_fidelity(&est, &ghz)?);
    }
    let mean = fids.iter().sum::<f64>() / fids.len() as f64;
    let std = (fids.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (fids.len() - 1) as f64).sqrt();
    let ok = worst > 1.0 - 1e-8 && worst_mixed < 1e-8 && std <= 0.015;
    Ok((
        ok,
        format!(
            "min infinite-shot fidelity 1 - {:.1e}, mixed max error {worst_mixed:.1e}, 3000-shot GHZ std {std:.4} <= 0.015 (mean {mean:.4})",
            1.0 - worst
        ),
    ))
}

fn benchmarking() -> Result<(bool, String)> {
    let rb = results(r#"{"experiment": "rb", "seed": 11}"#)?;
    let rb_shots = results(r#"{"experiment": "rb", "seed": 12, "shots": 3000}"#)?;
    let f = get(&rb, "average_gate_fidelity")?;
    let fs = get(&rb_shots, "average_gate_fidelity")?;
    let xeb = results(r#"{"experiment": "xeb", "seed": 13}"#)?;
    let e = get(&xeb, "cycle_error")?;
    let split = results(
        r#"{"experiment": "xeb", "seed": 14, "params": {
            "two_qubit_error": {"kind": "depolarizing", "strength": 0.036},
            "single_qubit_error": {"kind": "depolarizing", "strength": 0.002}}}"#,
    )?;
    let cz = get(&split, "two_qubit_error_estimate")?;
    let ok = within(f, 0.9974, 5e-4) && within(fs, 0.9974, 5e-4) && within(e, 0.041, 5e-3) && within(cz, 0.036, 5e-3);
    Ok((
        ok,
        format!("RB {f:.5} (3000 shots {fs:.5}) vs 0.9974 +- 0.0005, XEB {e:.4} vs 0.041 +- 0.005, CZ share {cz:.4} vs 0.036 +- 0.005"),
    ))
}

fn csv_files(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir)?.to_path_buf(), std::fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Result<(bool, String)> {
    let tmp = tempfile::tempdir()?;
    let scenarios = [
        (
            "tomo.json",
            r#"{"experiment": "transfer-tomo", "seed": 99, "shots": 2000,
                "sweep": [{"parameter": "params.tau_ns", "values": [68, 70, 72, 74]}]}"#,
        ),
        (
            "rb.json",
            r#"{"experiment": "rb", "seed": 7, "shots": 500,
                "params": {"n_sequences": 12},
                "sweep": [{"parameter": "params.error.strength", "values": [0.002, 0.004, 0.006, 0.008, 0.01]}]}"#,
        ),
    ];
    let exe = env!("CARGO_BIN_EXE_qnetsim");
    let mut compared = 0;
    for (name, text) in scenarios {
        let path = tmp.path().join(name);
        std::fs::write(&path, text)?;
        let mut dirs = Vec::new();
        for (tag, jobs, env) in [
            ("j1", Some("1"), None),
            ("j8", Some("8"), None),
            ("env8", None, Some("8")),
        ] {
            let out = tmp.path().join(format!("{name}-{tag}"));
            let mut cmd = Command::new(exe);
            cmd.arg("run")
                .arg(&path)
                .arg("--out")
                .arg(&out)
                .env_remove("QNETSIM_JOBS");
            if let Some(j) = jobs {
                cmd.arg("--jobs").arg(j);
            }
            if let Some(j) = env {
                cmd.env("QNETSIM_JOBS", j);
            }
            let status = cmd.output()?;
            if !status.status.success() {
                bail!("{name} {tag}: {}", String::from_utf8_lossy(&status.stderr));
            }
            dirs.push(csv_files(&out)?);
        }
        if dirs[0].is_empty() || dirs.iter().any(|d| d != &dirs[0]) {
            return Ok((false, format!("{name}: CSV artifacts differ between job counts")));
        }
        compared += dirs[0].len();
    }
    Ok((
        true,
        format!("{compared} CSV files byte-identical at --jobs 1, --jobs 8 and QNETSIM_JOBS=8"),
    ))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let checks: [(&str, Check); 12] = [
        ("full cable transfer", st_transfer),
        ("Bell pair by half transfer", bell_half),
        ("GHZ preparation and transfer", ghz_pipeline),
        ("network GHZ", network_ghz),
        ("circuit model", circuit_model),
        ("wirebond loss fit", wirebond_fit),
        ("gate timings and CZ phases", gate_timings),
        ("vacuum Rabi analytic oracle", rabi_oracle),
        ("solver invariants", solver_invariants),
        ("tomography", tomography_round_trip),
        ("benchmarking self-consistency", benchmarking),
        ("determinism across job counts", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = match check() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<32} {}  {} [{:.1} s]",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria pass",
        checks.len() - failed,
        checks.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
