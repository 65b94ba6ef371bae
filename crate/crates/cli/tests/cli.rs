use std::path::Path;
use std::process::{Command, Output};

use qnetsim_cli::report::emit_report;
use qnetsim_cli::runner::{sha256_hex, Manifest, MANIFEST_FILE, SUMMARY_FILE};
use qnetsim_core::DeviceConfig;
use serde_json::Value;

fn qnetsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnetsim"))
        .args(args)
        .env_remove("QNETSIM_JOBS")
        .output()
        .expect("spawn qnetsim")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_fit(dir: &Path, extra: &str) -> String {
    let scenario = write(dir, "fit.json", &format!(r#"{{"experiment": "fit-wirebond"{extra}}}"#));
    let out = dir.join("out");
    let o = qnetsim(&["run", &scenario, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.to_str().unwrap().to_string()
}

#[test]
fn unknown_experiment_lists_registered_names() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(tmp.path(), "bad.json", r#"{"experiment": "teleport"}"#);
    let o = qnetsim(&["run", &s]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("unknown experiment `teleport`"), "{err}");
    for name in ["transfer", "bell-st-half", "network-ghz", "rb", "xeb", "fit-coupler"] {
        assert!(err.contains(name), "{name} missing from: {err}");
    }
}

#[test]
fn unknown_field_is_reported_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(
        tmp.path(),
        "bad.json",
        r#"{"experiment": "rb", "params": {"lenghts": [1, 2]}}"#,
    );
    let o = qnetsim(&["validate", &s]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("lenghts"), "{}", stderr(&o));
}

#[test]
fn rerun_into_same_directory_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fit(tmp.path(), "");
    let scenario = tmp.path().join("fit.json");
    let again = qnetsim(&["run", scenario.to_str().unwrap(), "--out", &out]);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("artifact path collision"), "{}", stderr(&again));
    let forced = qnetsim(&["run", scenario.to_str().unwrap(), "--out", &out, "--force"]);
    assert!(forced.status.success(), "{}", stderr(&forced));
}

#[test]
fn stray_artifact_blocks_run_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    std::fs::create_dir(&out).unwrap();
    std::fs::write(out.join(SUMMARY_FILE), "{}").unwrap();
    let s = write(tmp.path(), "fit.json", r#"{"experiment": "fit-wirebond"}"#);
    let o = qnetsim(&["run", &s, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains(SUMMARY_FILE), "{}", stderr(&o));
}

#[test]
fn report_on_empty_directory_is_a_missing_artifact_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qnetsim(&["report", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing artifact"), "{}", stderr(&o));
}

#[test]
fn report_flags_deleted_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fit(tmp.path(), "");
    let m: Manifest = serde_json::from_slice(&std::fs::read(Path::new(&out).join(MANIFEST_FILE)).unwrap()).unwrap();
    let victim = m.artifacts.iter().find(|a| a.path.ends_with(".csv")).unwrap();
    std::fs::remove_file(Path::new(&out).join(&victim.path)).unwrap();
    let err = emit_report(Path::new(&out)).unwrap_err().to_string();
    assert!(err.contains("missing artifact") && err.contains(&victim.path), "{err}");
}

#[test]
fn validate_rejects_non_invertible_readout() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(DeviceConfig::default()).unwrap();
    let good = write(tmp.path(), "good.json", &v.to_string());
    let ok = qnetsim(&["validate", &good]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    v["qubits"]["Q1A"]["readout_fg"] = serde_json::json!(0.4);
    let bad = write(tmp.path(), "bad.json", &v.to_string());
    let o = qnetsim(&["validate", &bad]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("readout_fg"), "{}", stderr(&o));
}

#[test]
fn manifest_covers_every_written_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fit(
        tmp.path(),
        r#", "sweep": [{"parameter": "params.noise_rel", "values": [0.0, 0.01]}]"#,
    );
    let out = Path::new(&out);
    let m: Manifest = serde_json::from_slice(&std::fs::read(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.experiment, "fit-wirebond");
    assert_eq!(m.points, 2);
    assert_eq!(m.inputs_sha256.len(), 64);
    let mut on_disk = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != MANIFEST_FILE {
                on_disk.push(p.strip_prefix(out).unwrap().to_str().unwrap().replace('\\', "/"));
            }
        }
    }
    on_disk.sort();
    let listed: Vec<String> = m.artifacts.iter().map(|a| a.path.clone()).collect();
    assert_eq!(listed, on_disk);
    for a in &m.artifacts {
        let bytes = std::fs::read(out.join(&a.path)).unwrap();
        assert_eq!(a.bytes, bytes.len() as u64);
        assert_eq!(a.sha256, sha256_hex(&bytes));
    }
    assert!(listed.iter().any(|p| p == "sweep.csv"));
    assert!(listed.iter().any(|p| p.starts_with("point_0001/")));
}

#[test]
fn report_marks_out_of_band_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fit(tmp.path(), r#", "params": {"truth_r_s_ohm": 0.5}"#);
    let text = String::from_utf8(qnetsim(&["report", &out]).stdout).unwrap();
    let line = text.lines().find(|l| l.contains("r_s_ohm")).expect(&text);
    assert!(line.contains("FAIL"), "{line}");
    assert!(line.contains("+0.120000"), "{line}");
    let q0 = text.lines().find(|l| l.contains(" q0 ")).expect(&text);
    assert!(q0.contains("PASS"), "{q0}");
}

#[test]
fn report_warns_on_edited_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fit(tmp.path(), "");
    let summary = Path::new(&out).join(SUMMARY_FILE);
    let mut v: Value = serde_json::from_slice(&std::fs::read(&summary).unwrap()).unwrap();
    v["seed"] = serde_json::json!(123);
    std::fs::write(&summary, v.to_string()).unwrap();
    let r = emit_report(Path::new(&out)).unwrap();
    assert_eq!(r.modified, vec![SUMMARY_FILE.to_string()]);
    assert!(r.text.contains("warning: summary.json differs"));
}

#[test]
fn seed_flag_overrides_scenario_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(
        tmp.path(),
        "rb.json",
        r#"{"experiment": "rb", "seed": 1, "shots": 200, "params": {"n_sequences": 10}}"#,
    );
    let a = tmp.path().join("a");
    let o = qnetsim(&["run", &s, "--out", a.to_str().unwrap(), "--seed", "77"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&std::fs::read(a.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(v["seed"], 77);
}

#[test]
fn zero_jobs_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(tmp.path(), "fit.json", r#"{"experiment": "fit-wirebond"}"#);
    let o = qnetsim(&[
        "run",
        &s,
        "--jobs",
        "0",
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--jobs"), "{}", stderr(&o));
}

#[test]
fn bundled_scenarios_cover_every_experiment() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut seen = std::collections::BTreeSet::new();
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        let o = qnetsim(&["validate", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
        let v: Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        if let Some(name) = v["experiment"].as_str() {
            seen.insert(name.to_string());
        }
    }
    let all: std::collections::BTreeSet<String> =
        qnetsim_cli::Experiment::names().into_iter().map(String::from).collect();
    assert_eq!(seen, all);
}

#[test]
fn final_state_dump_is_a_density_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(tmp.path(), "t.json", r#"{"experiment": "transfer"}"#);
    let out = tmp.path().join("out");
    let o = qnetsim(&["run", &s, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rho = qnetsim_core::dynamics::read_state_binary(&std::fs::read(out.join("final_state.bin")).unwrap()).unwrap();
    assert_eq!(rho.nrows(), 8);
    assert!((rho.trace().re - 1.0).abs() < 1e-9);
}
