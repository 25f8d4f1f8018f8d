//! Stretched-exponential decay fits for coherence and relaxation traces.

use serde::{Deserialize, Serialize};

use super::lm::levenberg_marquardt;
use super::multiplet::FitOptions;
use super::FitReport;
use crate::error::{Error, Result};

/// `amplitude * exp(-(t/T)^n) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    /// Same time unit as the trace.
    pub t_decay: f64,
    pub stretch_n: f64,
    pub amplitude: f64,
    pub offset: f64,
}

impl DecayModel {
    pub fn exponential(t_decay: f64, amplitude: f64, offset: f64) -> Self {
        DecayModel {
            t_decay,
            stretch_n: 1.0,
            amplitude,
            offset,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-(t / self.t_decay).powf(self.stretch_n)).exp() + self.offset
    }

    fn feasible(&self) -> bool {
        self.t_decay > 0.0 && self.stretch_n > 0.0 && self.stretch_n <= 4.0
    }
}

fn check_trace(times: &[f64], values: &[f64], init: &DecayModel) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            actual: values.len(),
        });
    }
    if times.len() < 8 {
        return Err(Error::invalid(format!("need at least 8 samples, got {}", times.len())));
    }
    if !init.feasible() {
        return Err(Error::invalid("initial decay model needs T > 0 and 0 < n <= 4"));
    }
    let span = times.iter().copied().fold(f64::NEG_INFINITY, f64::max) - times.iter().copied().fold(f64::INFINITY, f64::min);
    if span < 1.5 * init.t_decay {
        return Err(Error::invalid(format!(
            "samples span {span}, less than 1.5x the initial T = {}",
            init.t_decay
        )));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max - min > 1e-12 * max.abs().max(min.abs()).max(1e-300)) {
        return Err(Error::invalid("trace is constant: no decay detectable"));
    }
    Ok(())
}

/// Least-squares fit; `stretch_n` is held at its initial value unless `free_n`.
pub fn fit_decay(
    times: &[f64],
    values: &[f64],
    init: &DecayModel,
    free_n: bool,
    options: &FitOptions,
) -> Result<(DecayModel, FitReport)> {
    check_trace(times, values, init)?;
    let unpack = |p: &[f64]| DecayModel {
        amplitude: p[0],
        t_decay: p[1],
        offset: p[2],
        stretch_n: if free_n { p[3] } else { init.stretch_n },
    };
    let mut p0 = vec![init.amplitude, init.t_decay, init.offset];
    let mut names = vec!["amplitude".to_string(), "T".into(), "offset".into()];
    if free_n {
        p0.push(init.stretch_n);
        names.push("stretch_n".into());
    }
    let residuals = |p: &[f64]| -> Vec<f64> {
        let m = unpack(p);
        if !m.feasible() {
            return vec![f64::NAN; times.len()];
        }
        times.iter().zip(values).map(|(t, y)| m.eval(*t) - y).collect()
    };
    let out = levenberg_marquardt(residuals, &p0, &options.lm)?;
    let model = unpack(&out.params);
    Ok((
        model,
        FitReport {
            parameter_names: names,
            values: out.params.clone(),
            sigmas: out.sigmas.clone(),
            residual_norm: out.cost.sqrt(),
            reduced_chi2: if out.dof > 0 { out.cost / out.dof as f64 } else { 0.0 },
            iterations: out.iterations,
            converged: true,
            dof: out.dof,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayComparison {
    pub frozen: DecayModel,
    pub frozen_report: FitReport,
    pub free: DecayModel,
    pub free_report: FitReport,
    /// `|T_free - T_frozen|` exceeds twice the combined 1 sigma.
    pub disagree: bool,
}

/// Fits with `n` frozen at 1 and free, and flags a > 2 sigma disagreement in `T`.
pub fn compare_stretch(
    times: &[f64],
    values: &[f64],
    init: &DecayModel,
    options: &FitOptions,
) -> Result<DecayComparison> {
    let frozen_init = DecayModel {
        stretch_n: 1.0,
        ..*init
    };
    let (frozen, frozen_report) = fit_decay(times, values, &frozen_init, false, options)?;
    let (free, free_report) = fit_decay(times, values, &frozen, true, options)?;
    let s1 = frozen_report.sigma("T").unwrap_or(0.0);
    let s2 = free_report.sigma("T").unwrap_or(0.0);
    let disagree = (free.t_decay - frozen.t_decay).abs() > 2.0 * s1.hypot(s2);
    Ok(DecayComparison {
        frozen,
        frozen_report,
        free,
        free_report,
        disagree,
    })
}
