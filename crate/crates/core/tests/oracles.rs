use std::f64::consts::PI;

use approx::assert_relative_eq;
use qnetsim_core::benchmarking::{clifford_group_1q, fit_exponential_decay, rb_run, ErrorChannelSpec, RbConfig};
use qnetsim_core::dynamics::{evolve_final, idle_kraus, EvolveOptions, NoiseOverrides};
use qnetsim_core::hilbert::{ghz_vector, state_fidelity, CVector, C64};
use qnetsim_core::pipeline::{ghz_pipeline, simulate_cable_transfer, StepModels};
use qnetsim_core::protocols::{cz_duration, iswap_duration, TransferParams};
use qnetsim_core::{ControlFrame, DensityMatrix, DeviceConfig, HilbertSpace, Node, PulseSchedule, ScheduleItem, Site};

fn single(frame: ControlFrame) -> PulseSchedule {
    PulseSchedule::new(vec![ScheduleItem::Frame(frame)]).unwrap()
}

#[test]
fn default_device_gate_durations() {
    let d = DeviceConfig::default();
    assert_relative_eq!(
        iswap_duration(&d),
        1.0 / (4.0 * d.exchange_coupling() / (2.0 * PI)),
        max_relative = 1e-12
    );
    assert_eq!(format!("{:.1}", iswap_duration(&d) * 1e9), "15.0");
    assert_eq!(format!("{:.1}", cz_duration(&d) * 1e9), "21.2");
}

#[test]
fn mode_inductance_matches_published_value() {
    let d = DeviceConfig::default();
    assert_eq!(format!("{:.0}", d.mode_inductance() * 1e9), "121");
}

#[test]
fn coupler_null_at_quarter_turn() {
    let ctx = DeviceConfig::default().coupling_context(Node::B).unwrap();
    assert_eq!(ctx.g(PI / 2.0), 0.0);
    assert!(ctx.g(PI).abs() > ctx.g(0.75 * PI).abs());
}

#[test]
fn resonant_vacuum_rabi_is_cos_squared() {
    let base = DeviceConfig::default();
    let mut d = DeviceConfig {
        mode_count: 1,
        communication_mode: 1,
        ..base.clone()
    };
    d.channel.mode_lifetimes_s = vec![base.channel.mode_lifetimes_s[2]];
    let space = HilbertSpace::with_max_excitations(vec![Site::qubit("Q2A"), Site::mode("m1", 1)], 1).unwrap();
    let rho0 = DensityMatrix::from_pure(space.clone(), &space.basis_vector(&[("Q2A", 1)]).unwrap()).unwrap();
    let g = 2.0 * PI * 5.5e6;
    let opts = EvolveOptions {
        dt_max: 2e-11,
        sample_stride: 0,
        noise: NoiseOverrides::lossless(),
    };
    for t in [5e-9, 20e-9, 45.45e-9, 70e-9] {
        let frame = ControlFrame::new(t).detune("Q2A", d.mode_detuning(1)).cable(Node::A, g);
        let rho = evolve_final(&rho0, &single(frame), &d, &opts).unwrap();
        let excited = space.basis_vector(&[("Q2A", 1)]).unwrap();
        let p = state_fidelity(&rho, &excited).unwrap();
        assert!((p - (g * t).cos().powi(2)).abs() < 1e-9, "t={t}: {p}");
    }
}

#[test]
fn idle_lindblad_matches_kraus_closed_form() {
    let d = DeviceConfig::default();
    let q = *d.qubit("Q1A").unwrap();
    let space = HilbertSpace::new(vec![Site::qubit("Q1A")]).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus = CVector::from_vec(vec![C64::new(s, 0.0), C64::new(s, 0.0)]);
    let rho0 = DensityMatrix::from_pure(space, &plus).unwrap();
    let t = 2e-6;
    let rho = evolve_final(&rho0, &single(ControlFrame::new(t)), &d, &EvolveOptions::default()).unwrap();
    let expect = rho0.apply_kraus(&idle_kraus(t, q.t1_s, q.t_phi_s));
    assert_relative_eq!(rho.matrix()[(1, 1)].re, expect.matrix()[(1, 1)].re, epsilon = 1e-9);
    assert_relative_eq!(
        rho.matrix()[(0, 1)].norm(),
        expect.matrix()[(0, 1)].norm(),
        epsilon = 1e-9
    );
}

#[test]
fn frozen_transfer_figures() {
    let d = DeviceConfig::default();
    let opts = EvolveOptions::default();
    let st = simulate_cable_transfer(&TransferParams::st(), false, &d, &opts).unwrap();
    assert!((st.efficiency() - 0.8629).abs() < 5e-4, "{}", st.efficiency());
    assert!((st.process_fidelity().unwrap() - 0.9251).abs() < 5e-4);
    let half = simulate_cable_transfer(&TransferParams::st_half(), true, &d, &opts).unwrap();
    assert!((half.bell_fidelity() - 0.9256).abs() < 5e-4, "{}", half.bell_fidelity());
}

#[test]
fn ideal_ghz_pipeline_is_exact() {
    let d = DeviceConfig::default();
    let r = ghz_pipeline(&StepModels::ideal(), &StepModels::ideal(), &d).unwrap();
    assert_relative_eq!(r.prep_fidelity, 1.0, epsilon = 1e-12);
    assert_relative_eq!(r.transfer_fidelity, 1.0, epsilon = 1e-12);
    assert_eq!(ghz_vector(3).len(), 8);
}

#[test]
fn clifford_group_is_closed() {
    let g = clifford_group_1q();
    assert_eq!(g.len(), 24);
    for a in 0..g.len() {
        let e = g.then(a, g.inverse(a));
        assert_eq!(g.then(e, a), a);
    }
}

#[test]
fn noiseless_rb_has_unit_decay() {
    let r = rb_run(&RbConfig {
        lengths: vec![1, 10, 50, 100],
        n_sequences: 10,
        error: ErrorChannelSpec::None,
        seed: 3,
        shots: None,
    })
    .unwrap();
    assert_relative_eq!(r.fit.p, 1.0, epsilon = 1e-9);
    assert!(r.points.iter().all(|p| (p.mean - 1.0).abs() < 1e-9));
}

#[test]
fn decay_fit_recovers_exact_curve() {
    let xs: Vec<f64> = [1.0, 5.0, 10.0, 20.0, 50.0, 100.0].to_vec();
    let ys: Vec<f64> = xs.iter().map(|x| 0.5 * 0.98f64.powf(*x) + 0.5).collect();
    let f = fit_exponential_decay(&xs, &ys, true).unwrap();
    assert_relative_eq!(f.p, 0.98, epsilon = 1e-8);
    assert_relative_eq!(f.a, 0.5, epsilon = 1e-6);
    assert_relative_eq!(f.b, 0.5, epsilon = 1e-6);
}
