//! Lumped-element models of the cable channel, the tunable couplers and the
//! loss they introduce, with least-squares fitters for the model constants.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Read;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("mode index must be at least 1")]
    BadModeIndex,
    #[error("target coupling {target:e} rad/s exceeds the reachable maximum {max:e} rad/s")]
    Unreachable { target: f64, max: f64 },
    #[error("degenerate fit data: {0}")]
    Degenerate(String),
    #[error("fit did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("qubit has no series inductance L_q")]
    MissingLq,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CircuitError>;

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(CircuitError::NonPositive { name, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub cable_length_m: f64,
    pub cable_inductance_h_per_m: f64,
    pub cable_capacitance_f_per_m: f64,
    pub cpw_length_m: f64,
    pub cpw_inductance_h_per_m: f64,
    pub cpw_capacitance_f_per_m: f64,
    /// Energy lifetimes of the simulated standing modes, lowest mode first.
    pub mode_lifetimes_s: Vec<f64>,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        positive("cable_length_m", self.cable_length_m)?;
        positive("cable_inductance_h_per_m", self.cable_inductance_h_per_m)?;
        positive("cable_capacitance_f_per_m", self.cable_capacitance_f_per_m)?;
        positive("cpw_length_m", self.cpw_length_m)?;
        positive("cpw_inductance_h_per_m", self.cpw_inductance_h_per_m)?;
        positive("cpw_capacitance_f_per_m", self.cpw_capacitance_f_per_m)?;
        for t in &self.mode_lifetimes_s {
            positive("mode_lifetimes_s", *t)?;
        }
        Ok(())
    }

    /// Phase constant of the on-chip line at angular frequency `omega`.
    pub fn cpw_beta(&self, omega: f64) -> f64 {
        omega * (self.cpw_inductance_h_per_m * self.cpw_capacitance_f_per_m).sqrt()
    }

    pub fn cpw_impedance(&self) -> f64 {
        (self.cpw_inductance_h_per_m / self.cpw_capacitance_f_per_m).sqrt()
    }

    /// Free spectral range of the bare cable, `1 / (2ℓ√(LC))`.
    pub fn derived_fsr(&self) -> f64 {
        1.0 / (2.0 * self.cable_length_m * (self.cable_inductance_h_per_m * self.cable_capacitance_f_per_m).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplerConfig {
    pub l_g_h: f64,
    pub l_w_h: f64,
    pub l_t_h: f64,
    pub r_g_ohm: f64,
}

impl CouplerConfig {
    pub fn validate(&self) -> Result<()> {
        positive("l_g_h", self.l_g_h)?;
        positive("l_w_h", self.l_w_h)?;
        positive("l_t_h", self.l_t_h)?;
        if self.r_g_ohm < 0.0 || !self.r_g_ohm.is_finite() {
            return Err(CircuitError::NonPositive {
                name: "r_g_ohm",
                value: self.r_g_ohm,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitConfig {
    pub f_max_hz: f64,
    pub f_idle_hz: f64,
    pub anharmonicity_hz: f64,
    pub t1_s: f64,
    pub t_phi_s: f64,
    /// Series inductance to the coupler, only for cable-coupled qubits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_q_h: Option<f64>,
    pub readout_fg: f64,
    pub readout_fe: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirebondLossModel {
    pub r_s_ohm: f64,
    pub q0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeParams {
    pub l_m: f64,
    pub omega_m: f64,
    pub c_m: f64,
}

/// Series-LC equivalent of standing mode `m`.
pub fn standing_mode_params(cfg: &ChannelConfig, fsr: f64, m: u32) -> Result<ModeParams> {
    if m < 1 {
        return Err(CircuitError::BadModeIndex);
    }
    cfg.validate()?;
    positive("fsr", fsr)?;
    let l_m = mode_inductance(cfg);
    let omega_m = m as f64 * 2.0 * PI * fsr;
    Ok(ModeParams {
        l_m,
        omega_m,
        c_m: 1.0 / (omega_m * omega_m * l_m),
    })
}

/// `L_m = ½(ℒ_cb ℓ_cb + 2 ℒ_cpw ℓ_c)`, independent of the mode number.
pub fn mode_inductance(cfg: &ChannelConfig) -> f64 {
    0.5 * (cfg.cable_inductance_h_per_m * cfg.cable_length_m + 2.0 * cfg.cpw_inductance_h_per_m * cfg.cpw_length_m)
}

/// Effective mutual inductance of the coupler at junction phase `delta`.
pub fn coupler_inductance(delta: f64, cfg: &CouplerConfig) -> f64 {
    let c = delta.cos();
    if c.abs() < 1e-12 {
        return 0.0;
    }
    cfg.l_g_h * cfg.l_g_h / (2.0 * cfg.l_g_h + cfg.l_w_h + cfg.l_t_h / c)
}

pub fn qubit_mode_coupling(m_c: f64, omega_m: f64, omega_q: f64, l_q: f64, l_g: f64, l_m: f64) -> f64 {
    -(m_c / 2.0) * (omega_m * omega_q / ((l_g + l_q) * (l_g + l_m))).sqrt()
}

/// Everything needed to map a coupler phase to a qubit–mode coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingContext {
    pub coupler: CouplerConfig,
    pub l_q: f64,
    pub l_m: f64,
    pub omega_m: f64,
    pub omega_q: f64,
}

impl CouplingContext {
    pub fn g(&self, delta: f64) -> f64 {
        qubit_mode_coupling(
            coupler_inductance(delta, &self.coupler),
            self.omega_m,
            self.omega_q,
            self.l_q,
            self.coupler.l_g_h,
            self.l_m,
        )
    }

    pub fn g_max(&self) -> f64 {
        self.g(PI)
    }

    pub fn with_lt(&self, l_t: f64) -> Self {
        let mut c = *self;
        c.coupler.l_t_h = l_t;
        c
    }
}

/// Phase in `[π/2, π]` that produces coupling `g_target`, by bisection.
pub fn coupler_phase_for_coupling(g_target: f64, ctx: &CouplingContext) -> Result<f64> {
    let target = g_target.abs();
    let g_max = ctx.g_max().abs();
    if target > g_max * (1.0 + 1e-12) {
        return Err(CircuitError::Unreachable { target, max: g_max });
    }
    if target == 0.0 {
        return Ok(FRAC_PI_2);
    }
    if target >= g_max {
        return Ok(PI);
    }
    let (mut lo, mut hi) = (FRAC_PI_2, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ctx.g(mid).abs() < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Loaded quality factor of a standing mode with wirebond interface loss.
pub fn channel_mode_q(omega_m: f64, model: &WirebondLossModel, l_m: f64, cfg: &ChannelConfig) -> f64 {
    let cos2 = (cfg.cpw_beta(omega_m) * cfg.cpw_length_m).cos().powi(2);
    if cos2 < 1e-12 || model.r_s_ohm == 0.0 {
        return model.q0;
    }
    let inv = cos2 * model.r_s_ohm / (omega_m * l_m) + 1.0 / model.q0;
    1.0 / inv
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSample {
    pub omega_m: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WirebondFit {
    pub model: WirebondLossModel,
    /// Euclidean norm of the inverse-Q residuals.
    pub residual_norm: f64,
}

/// Fit `(R_s, Q_0)` by least squares in inverse-Q space, where the model is
/// linear: `1/Q = R_s · cos²(βℓ_c)/(ω L_m) + 1/Q_0`.
pub fn fit_wirebond_loss(samples: &[QSample], cfg: &ChannelConfig, l_m: f64) -> Result<WirebondFit> {
    if samples.len() < 3 {
        return Err(CircuitError::Degenerate(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    let first = samples[0].omega_m;
    if samples.iter().all(|s| (s.omega_m - first).abs() <= 1e-9 * first.abs()) {
        return Err(CircuitError::Degenerate("all samples share one frequency".into()));
    }
    let mut xs = Vec::with_capacity(samples.len());
    let mut ys = Vec::with_capacity(samples.len());
    for s in samples {
        positive("q", s.q)?;
        positive("omega_m", s.omega_m)?;
        xs.push((cfg.cpw_beta(s.omega_m) * cfg.cpw_length_m).cos().powi(2) / (s.omega_m * l_m));
        ys.push(1.0 / s.q);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 1e-24 * mx * mx * n {
        return Err(CircuitError::Degenerate(
            "loss factor does not vary across the samples".into(),
        ));
    }
    let r_s = sxy / sxx;
    let inv_q0 = my - r_s * mx;
    let residual_norm = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (r_s * x + inv_q0 - y).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(WirebondFit {
        model: WirebondLossModel {
            r_s_ohm: r_s,
            q0: 1.0 / inv_q0,
        },
        residual_norm,
    })
}

/// Reads `freq_hz,q_value` rows into samples.
pub fn read_q_samples<R: Read>(reader: R) -> Result<Vec<QSample>> {
    #[derive(Deserialize)]
    struct Row {
        freq_hz: f64,
        q_value: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["freq_hz", "q_value"] {
        return Err(CircuitError::Degenerate(format!(
            "expected header `freq_hz,q_value`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        out.push(QSample {
            omega_m: 2.0 * PI * row.freq_hz,
            q: row.q_value,
        });
    }
    Ok(out)
}

/// Impedance of a lossless line of impedance `z0` and electrical length
/// `theta`, terminated by `z_load`.
fn line_input_impedance(z0: f64, theta: f64, z_load: Complex64) -> Complex64 {
    let j = Complex64::new(0.0, 1.0);
    let t = theta.tan();
    z0 * (z_load + j * z0 * t) / (z0 + j * z_load * t)
}

fn parallel(a: Complex64, b: Complex64) -> Complex64 {
    a * b / (a + b)
}

/// Energy decay rate the coupler network adds to a qubit at `omega_q`.
///
/// The qubit inductance `L_q` feeds the coupler node, which has `L_g` to
/// ground and the junction branch `L_w + L_T/cos δ` to the channel-side node.
/// That node has its own `L_g` to ground and the on-chip line of length `ℓ_c`
/// to the wirebond, with `R_g` from the wirebond to ground.
pub fn induced_decay_rate(delta: f64, omega_q: f64, l_q: f64, coupler: &CouplerConfig, cfg: &ChannelConfig) -> f64 {
    let c = delta.cos();
    if c.abs() < 1e-12 || coupler.r_g_ohm == 0.0 {
        return 0.0;
    }
    let jw = Complex64::new(0.0, omega_q);
    let z_stub = line_input_impedance(
        cfg.cpw_impedance(),
        cfg.cpw_beta(omega_q) * cfg.cpw_length_m,
        Complex64::new(coupler.r_g_ohm, 0.0),
    );
    let z_far = parallel(jw * coupler.l_g_h, z_stub);
    let l_j = coupler.l_w_h + coupler.l_t_h / c;
    let z_node = parallel(jw * coupler.l_g_h, jw * l_j + z_far);
    let z_q = jw * l_q + z_node;
    let c_q = 1.0 / (omega_q * omega_q * (coupler.l_g_h + l_q));
    ((1.0 / z_q).re / c_q).max(0.0)
}

/// Qubit `T1` with the coupler-induced loss at phase `delta`.
pub fn qubit_loaded_t1(
    delta: f64,
    omega_q: f64,
    qubit: &QubitConfig,
    coupler: &CouplerConfig,
    cfg: &ChannelConfig,
) -> Result<f64> {
    let l_q = qubit.l_q_h.ok_or(CircuitError::MissingLq)?;
    let gamma = induced_decay_rate(delta, omega_q, l_q, coupler, cfg);
    if gamma == 0.0 {
        return Ok(qubit.t1_s);
    }
    Ok(1.0 / (1.0 / qubit.t1_s + gamma))
}

/// Minimize a 1-D function on `[lo, hi]`: coarse scan, then golden section
/// around the best grid point.
pub(crate) fn minimize_scalar<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, grid: usize) -> f64 {
    let step = (hi - lo) / grid as f64;
    let mut best = (lo, f(lo));
    for k in 1..=grid {
        let x = lo + step * k as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let mut a = (best.0 - step).max(lo);
    let mut b = (best.0 + step).min(hi);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarFit {
    pub value: f64,
    pub residual_norm: f64,
}

/// Fit the junction inductance `L_T` to measured `(δ, g)` pairs.
pub fn fit_coupler_lt(samples: &[(f64, f64)], ctx: &CouplingContext, bounds: (f64, f64)) -> Result<ScalarFit> {
    if samples.len() < 2 {
        return Err(CircuitError::Degenerate("need at least 2 samples".into()));
    }
    let cost = |lt: f64| -> f64 {
        let c = ctx.with_lt(lt);
        samples.iter().map(|(d, g)| (c.g(*d) - g).powi(2)).sum::<f64>()
    };
    let lt = minimize_scalar(cost, bounds.0, bounds.1, 400);
    Ok(ScalarFit {
        value: lt,
        residual_norm: cost(lt).sqrt(),
    })
}

/// Fit the shunt resistance `R_g` to measured `(δ, T1)` pairs, with residuals
/// in decay rate.
pub fn fit_loaded_t1_rg(
    samples: &[(f64, f64)],
    omega_q: f64,
    qubit: &QubitConfig,
    coupler: &CouplerConfig,
    cfg: &ChannelConfig,
    bounds: (f64, f64),
) -> Result<ScalarFit> {
    if samples.len() < 2 {
        return Err(CircuitError::Degenerate("need at least 2 samples".into()));
    }
    let l_q = qubit.l_q_h.ok_or(CircuitError::MissingLq)?;
    let cost = |rg: f64| -> f64 {
        let mut c = *coupler;
        c.r_g_ohm = rg;
        samples
            .iter()
            .map(|(d, t1)| {
                let model = 1.0 / qubit.t1_s + induced_decay_rate(*d, omega_q, l_q, &c, cfg);
                (model - 1.0 / t1).powi(2)
            })
            .sum::<f64>()
    };
    let rg = minimize_scalar(cost, bounds.0, bounds.1, 400);
    Ok(ScalarFit {
        value: rg,
        residual_norm: cost(rg).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn channel() -> ChannelConfig {
        ChannelConfig {
            cable_length_m: 1.0,
            cable_inductance_h_per_m: 240.5e-9,
            cable_capacitance_f_per_m: 96.2e-12,
            cpw_length_m: 2e-3,
            cpw_inductance_h_per_m: 402e-9,
            cpw_capacitance_f_per_m: 173e-12,
            mode_lifetimes_s: vec![256e-9, 177e-9, 473e-9, 200e-9, 370e-9],
        }
    }

    fn coupler_a() -> CouplerConfig {
        CouplerConfig {
            l_g_h: 0.2e-9,
            l_w_h: 0.1e-9,
            l_t_h: 0.620e-9,
            r_g_ohm: 1.0,
        }
    }

    fn qubit() -> QubitConfig {
        QubitConfig {
            f_max_hz: 6.14e9,
            f_idle_hz: 5.87e9,
            anharmonicity_hz: -0.15e9,
            t1_s: 7e-6,
            t_phi_s: 3.8e-6,
            l_q_h: Some(8.4e-9),
            readout_fg: 0.981,
            readout_fe: 0.935,
        }
    }

    fn ctx() -> CouplingContext {
        let w = 2.0 * PI * 5.8e9;
        CouplingContext {
            coupler: coupler_a(),
            l_q: 8.4e-9,
            l_m: mode_inductance(&channel()),
            omega_m: w,
            omega_q: w,
        }
    }

    #[test]
    fn mode_parameters() {
        let p = standing_mode_params(&channel(), 105e6, 55).unwrap();
        assert_relative_eq!(p.l_m, 121.054e-9, max_relative = 1e-12);
        assert_relative_eq!(p.omega_m / (2.0 * PI), 5.775e9, max_relative = 1e-12);
        assert_relative_eq!(p.c_m * p.l_m * p.omega_m * p.omega_m, 1.0, max_relative = 1e-12);
        let w = 2.0 * PI * 5.798e9;
        let c = 1.0 / (w * w * 121e-9);
        assert!((c - 6.2e-15).abs() < 0.05e-15);
        assert!(standing_mode_params(&channel(), 105e6, 0).is_err());
        assert!(standing_mode_params(&channel(), -1.0, 3).is_err());
    }

    #[test]
    fn derived_fsr_is_consistent() {
        let f = channel().derived_fsr();
        assert!((f / 105e6 - 1.0).abs() < 0.02, "{f}");
    }

    #[test]
    fn coupler_inductance_values() {
        let c = coupler_a();
        assert_eq!(coupler_inductance(FRAC_PI_2, &c), 0.0);
        assert_relative_eq!(
            coupler_inductance(PI, &c),
            0.04e-18 / (0.5e-9 - 0.62e-9),
            max_relative = 1e-12
        );
        assert_relative_eq!(coupler_inductance(PI, &c), -0.3333e-9, max_relative = 1e-3);
        assert_relative_eq!(coupler_inductance(0.0, &c), 0.04e-9 / 1.12, max_relative = 1e-12);
    }

    #[test]
    fn coupling_values() {
        let g = ctx().g_max() / (2.0 * PI);
        assert!((g - 29e6).abs() < 1e6, "{g}");
        assert_eq!(ctx().g(FRAC_PI_2), 0.0);
        let c = ctx();
        let mut c2 = c;
        c2.omega_m *= 2.0;
        assert_relative_eq!(c2.g(PI) / c.g(PI), 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn coupling_is_monotonic_on_branch() {
        let c = ctx();
        let mut prev = 0.0;
        for k in 0..=1000 {
            let d = FRAC_PI_2 + FRAC_PI_2 * k as f64 / 1000.0;
            let g = c.g(d).abs();
            assert!(g >= prev - 1e-9);
            prev = g;
        }
    }

    #[test]
    fn phase_inversion() {
        let c = ctx();
        assert_eq!(coupler_phase_for_coupling(0.0, &c).unwrap(), FRAC_PI_2);
        assert_eq!(coupler_phase_for_coupling(c.g_max(), &c).unwrap(), PI);
        for k in 1..50 {
            let gt = c.g_max() * k as f64 / 50.0;
            let d = coupler_phase_for_coupling(gt, &c).unwrap();
            assert_relative_eq!(c.g(d), gt, max_relative = 1e-6);
        }
        assert!(coupler_phase_for_coupling(c.g_max() * 1.1, &c).is_err());
    }

    #[test]
    fn mode_q_limits() {
        let cfg = channel();
        let lm = mode_inductance(&cfg);
        let lossless = WirebondLossModel {
            r_s_ohm: 0.0,
            q0: 90.9e3,
        };
        assert_eq!(channel_mode_q(2.0 * PI * 5.8e9, &lossless, lm, &cfg), 90.9e3);
        let m = WirebondLossModel {
            r_s_ohm: 0.38,
            q0: 90.9e3,
        };
        let w_null = FRAC_PI_2 / (cfg.cpw_length_m * (cfg.cpw_inductance_h_per_m * cfg.cpw_capacitance_f_per_m).sqrt());
        assert_relative_eq!(channel_mode_q(w_null, &m, lm, &cfg), 90.9e3, max_relative = 1e-9);
        let mut c3 = cfg.clone();
        c3.cpw_length_m = 3e-3;
        let q = channel_mode_q(2.0 * PI * 5.8e9, &m, mode_inductance(&c3), &c3);
        assert!((q - 2.3e4).abs() < 0.1e4, "{q}");
    }

    #[test]
    fn wirebond_fit_rejects_single_frequency() {
        let s = vec![QSample { omega_m: 1e10, q: 2e4 }; 4];
        assert!(matches!(
            fit_wirebond_loss(&s, &channel(), 121e-9),
            Err(CircuitError::Degenerate(_))
        ));
    }

    #[test]
    fn loaded_t1_limits() {
        let w = 2.0 * PI * 5.798e9;
        let q = qubit();
        let cfg = channel();
        assert_eq!(qubit_loaded_t1(FRAC_PI_2, w, &q, &coupler_a(), &cfg).unwrap(), q.t1_s);
        let mut c0 = coupler_a();
        c0.r_g_ohm = 0.0;
        assert_eq!(qubit_loaded_t1(PI, w, &q, &c0, &cfg).unwrap(), q.t1_s);
        let mut q_no = q;
        q_no.l_q_h = None;
        assert!(qubit_loaded_t1(PI, w, &q_no, &coupler_a(), &cfg).is_err());
    }

    #[test]
    fn loaded_t1_decreases_with_coupling() {
        let w = 2.0 * PI * 5.798e9;
        let q = qubit();
        let cfg = channel();
        let mut prev = q.t1_s;
        for k in 0..=200 {
            let d = FRAC_PI_2 + FRAC_PI_2 * k as f64 / 200.0;
            let t = qubit_loaded_t1(d, w, &q, &coupler_a(), &cfg).unwrap();
            assert!(t <= prev + 1e-18 && t <= q.t1_s);
            prev = t;
        }
    }
}
