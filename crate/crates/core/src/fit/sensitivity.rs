//! DC and AC magnetic-field sensitivity from spectra and coherence data.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::multiplet::MultipletModel;
use crate::error::{Error, Result};
use crate::GAMMA_E;

/// Electron gyromagnetic ratio in Hz/T.
pub const GAMMA_E_HZ_PER_T: f64 = GAMMA_E * 1e6 * 1e4;

/// Inputs to the sensitivity formulas; SI time units, `delta_nu` in MHz.
#[allow(non_snake_case)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SensitivityInput {
    /// Photon detection rate, 1/s.
    pub R: Option<f64>,
    pub C_m: Option<f64>,
    pub delta_nu_MHz: Option<f64>,
    /// Largest `|dC/dnu|`, 1/Hz.
    pub max_slope_per_Hz: Option<f64>,
    pub C_max: Option<f64>,
    pub N_photons: Option<f64>,
    pub tau_s: Option<f64>,
    pub T2_s: Option<f64>,
    pub t_I_s: Option<f64>,
    pub t_R_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcMode {
    Slope,
    Lorentzian,
}

fn need(v: Option<f64>, name: &str) -> Result<f64> {
    match v {
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(Error::validation("sensitivity", name, format!("must be positive, got {x}"))),
        None => Err(Error::validation("sensitivity", name, "missing")),
    }
}

/// `(3 sqrt3 / 4) C_m / delta_nu`, the steepest slope of one Lorentzian dip, 1/Hz.
pub fn lorentzian_max_slope(c_m: f64, delta_nu_mhz: f64) -> f64 {
    0.75 * 3f64.sqrt() * c_m / (delta_nu_mhz * 1e6)
}

/// DC sensitivity `1 / (gamma_e sqrt(R) max|dC/dnu|)` in T/sqrt(Hz).
pub fn sensitivity_dc(input: &SensitivityInput, mode: DcMode) -> Result<f64> {
    let r = need(input.R, "R")?;
    let slope = match mode {
        DcMode::Slope => need(input.max_slope_per_Hz, "max_slope_per_Hz")?,
        DcMode::Lorentzian => {
            lorentzian_max_slope(need(input.C_m, "C_m")?, need(input.delta_nu_MHz, "delta_nu_MHz")?)
        }
    };
    Ok(1.0 / (GAMMA_E_HZ_PER_T * r.sqrt() * slope))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AcReport {
    /// T/sqrt(Hz).
    pub eta: f64,
    /// `tau / T2`; the optimum assumed by the caller is usually 1.
    pub tau_over_t2: f64,
}

/// AC sensitivity `(pi / 2 gamma) exp(tau/T2) sqrt(t_I + tau + t_R) / (C sqrt(N) tau)`.
pub fn sensitivity_ac(input: &SensitivityInput) -> Result<AcReport> {
    let c = need(input.C_max, "C_max")?;
    let n = need(input.N_photons, "N_photons")?;
    let tau = need(input.tau_s, "tau_s")?;
    let t2 = need(input.T2_s, "T2_s")?;
    let ti = need(input.t_I_s, "t_I_s")?;
    let tr = need(input.t_R_s, "t_R_s")?;
    let gamma = 2.0 * PI * GAMMA_E_HZ_PER_T;
    let eta = PI / (2.0 * gamma) / (c * (-tau / t2).exp() * n.sqrt()) * (ti + tau + tr).sqrt() / tau;
    Ok(AcReport {
        eta,
        tau_over_t2: tau / t2,
    })
}

/// Steepest slope of the fitted model relative to its baseline, 1/Hz.
pub fn max_slope(model: &MultipletModel) -> Result<f64> {
    model.validate()?;
    if model.baseline == 0.0 {
        return Err(Error::invalid("baseline must be non-zero"));
    }
    let centers = model.line_centers();
    let lo = centers.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * model.fwhm;
    let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * model.fwhm;
    let n = 20_000;
    let step = (hi - lo) / n as f64;
    let slope = |f: f64| model.derivative(f).abs();
    let (mut best_f, mut best) = (lo, slope(lo));
    for k in 1..=n {
        let f = lo + k as f64 * step;
        let s = slope(f);
        if s > best {
            best = s;
            best_f = f;
        }
    }
    // golden-section refinement around the best grid point
    let (mut a, mut b) = (best_f - step, best_f + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if slope(c) > slope(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best = best.max(slope(0.5 * (a + b)));
    Ok(best / model.baseline.abs() / 1e6)
}
