//! Binomial nuclear-polarization line weights and their extraction from
//! a resolved four-line spectrum.

use serde::{Deserialize, Serialize};

use super::multiplet::{fit_multiplet_full, MultipletFit, AmplitudeLaw, FitOptions, MultipletModel};
use super::FitReport;
use crate::error::{Error, Result};
use crate::esr::SpectrumSeries;

/// Frequency order of the four lines relative to the number `X` of
/// polarized nuclei.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineOrder {
    /// Ascending frequency is ascending `X`.
    #[default]
    Natural,
    /// Ascending frequency is descending `X`; the case for a negative
    /// nuclear gyromagnetic ratio.
    Reversed,
}

impl LineOrder {
    pub fn from_gamma(gamma_n: f64) -> Self {
        if gamma_n < 0.0 {
            LineOrder::Reversed
        } else {
            LineOrder::Natural
        }
    }

    fn arrange(self, mut w: [f64; 4]) -> [f64; 4] {
        if self == LineOrder::Reversed {
            w.reverse();
        }
        w
    }
}

fn check_fraction(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

/// `{(1-P)^3 : 3P(1-P)^2 : 3P^2(1-P) : P^3}` for `X = 0..3`, then arranged by `order`.
pub fn polarization_amplitudes(p: f64, order: LineOrder) -> Result<[f64; 4]> {
    check_fraction("P", p)?;
    let q = 1.0 - p;
    Ok(order.arrange([q * q * q, 3.0 * p * q * q, 3.0 * p * p * q, p * p * p]))
}

/// Two nuclei polarized with `P1` and one with `P2`.
pub fn polarization_amplitudes_2(p1: f64, p2: f64, order: LineOrder) -> Result<[f64; 4]> {
    check_fraction("P1", p1)?;
    check_fraction("P2", p2)?;
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    Ok(order.arrange([
        q1 * q1 * q2,
        q1 * q1 * p2 + 2.0 * p1 * q1 * q2,
        p1 * p1 * q2 + 2.0 * p1 * p2 * q1,
        p1 * p1 * p2,
    ]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarizationModel {
    Single,
    Double,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolarizationResult {
    pub model: PolarizationModel,
    pub order: LineOrder,
    /// `P` for the single model, `P1` for the double model.
    pub p: f64,
    pub sigma: f64,
    pub p2: Option<f64>,
    pub sigma_p2: Option<f64>,
    /// `(2 P1 + P2)/3`; equals `P` for the single model.
    pub net: f64,
    pub net_sigma: f64,
    /// `fwhm / |splitting|` of the free-amplitude pre-fit.
    pub resolvability: f64,
    pub fitted: MultipletModel,
}

/// Fits `P` (or `P1`, `P2`) to a four-line spectrum.
///
/// A free-amplitude fit runs first; the spectrum is rejected unless its
/// lines are resolved (`fwhm < |splitting|`). `init` seeds the geometry;
/// without it a guess from the spectrum is used.
pub fn fit_polarization(
    spec: &SpectrumSeries,
    model: PolarizationModel,
    order: LineOrder,
    init: Option<&MultipletModel>,
    options: &FitOptions,
) -> Result<(PolarizationResult, FitReport)> {
    let seeds = match init {
        Some(m) => vec![m.clone()],
        None => MultipletModel::guess_candidates(spec, 4, AmplitudeLaw::Free, 4)?,
    };
    // Free-amplitude pre-fit from every seed; the lowest residual wins.
    let mut free: Option<MultipletFit> = None;
    let mut last_err = None;
    for seed in &seeds {
        let mut free_init = MultipletModel::new(4, AmplitudeLaw::Free, seed.center, seed.splitting, seed.fwhm, 1.0)?;
        free_init.baseline = seed.baseline;
        let dip = seed.depth * seed.amplitudes.iter().copied().fold(0.0, f64::max);
        free_init.amplitudes = vec![dip.max(1e-6); 4];
        match fit_multiplet_full(spec, &free_init, options) {
            Ok(f) if free.as_ref().map_or(true, |b| f.report.residual_norm < b.report.residual_norm) => free = Some(f),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    let free = match (free, last_err) {
        (Some(f), _) => f,
        (None, Some(e)) => return Err(e),
        (None, None) => return Err(Error::invalid("no starting point for the free pre-fit")),
    };
    let resolvability = free.model.fwhm / free.model.splitting.abs();
    if !(resolvability < 1.0) {
        return Err(Error::invalid(format!(
            "multiplet not resolved: fwhm/|splitting| = {resolvability:.3} (needs < 1)"
        )));
    }

    // Mean X from the free amplitudes seeds P.
    let a = &free.model.amplitudes;
    let total: f64 = a.iter().map(|v| v.max(0.0)).sum();
    let mean_k = a.iter().enumerate().map(|(k, v)| k as f64 * v.max(0.0)).sum::<f64>() / total.max(1e-300);
    let mean_x = match order {
        LineOrder::Natural => mean_k,
        LineOrder::Reversed => 3.0 - mean_k,
    };
    let p0 = (mean_x / 3.0).clamp(0.05, 0.95);

    let law = match model {
        PolarizationModel::Single => AmplitudeLaw::Polarized,
        PolarizationModel::Double => AmplitudeLaw::PolarizedPair,
    };
    // An outer line too weak to see leaves the center ambiguous by one
    // spacing; the binomial law decides between the candidates.
    let s = free.model.splitting.abs();
    let mut fit = None;
    let mut last_err = None;
    for shift in [0.0, -s, s] {
        for p_start in [p0, 0.2, 0.5, 0.8] {
            let mut start = MultipletModel::new(4, law, free.model.center + shift, s, free.model.fwhm, total)?
                .with_order(order)?;
            start.baseline = free.model.baseline;
            match model {
                PolarizationModel::Single => start.set_polarization(p_start, None)?,
                // the pair model is singular at P1 = P2, so start off the diagonal
                PolarizationModel::Double => {
                    start.set_polarization((p_start + 0.1).min(0.97), Some((p_start - 0.2).max(0.03)))?
                }
            }
            let candidate = match fit_multiplet_full(spec, &start, options) {
                Ok(c) => c,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let better = fit
                .as_ref()
                .map_or(true, |f: &MultipletFit| candidate.report.residual_norm < f.report.residual_norm);
            if better {
                fit = Some(candidate);
            }
        }
    }
    let fit = match (fit, last_err) {
        (Some(f), _) => f,
        (None, Some(e)) => return Err(e),
        (None, None) => return Err(Error::invalid("no polarization fit start")),
    };
    let names = &fit.report.parameter_names;
    let idx = |name: &str| names.iter().position(|n| n == name).expect("parameter present");

    let result = match model {
        PolarizationModel::Single => {
            let p = fit.model.p.expect("single model has P");
            let k = idx("logit_p");
            let sigma = p * (1.0 - p) * fit.report.sigmas[k];
            PolarizationResult {
                model,
                order,
                p,
                sigma,
                p2: None,
                sigma_p2: None,
                net: p,
                net_sigma: sigma,
                resolvability,
                fitted: fit.model.clone(),
            }
        }
        PolarizationModel::Double => {
            let p1 = fit.model.p.expect("pair model has P1");
            let p2 = fit.model.p2.expect("pair model has P2");
            let (k1, k2) = (idx("logit_p1"), idx("logit_p2"));
            let d1 = p1 * (1.0 - p1);
            let d2 = p2 * (1.0 - p2);
            // The pair law is singular along P1 = P2, but the net
            // polarization is orthogonal to that null direction; a
            // truncated pseudo-inverse keeps its variance finite.
            let mut g = nalgebra::DVector::zeros(fit.normal_matrix.nrows());
            g[k1] = 2.0 / 3.0 * d1;
            g[k2] = d2 / 3.0;
            let svd = fit.normal_matrix.clone().svd(true, true);
            let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
            let net_var = match svd.pseudo_inverse(smax * 1e-10) {
                Ok(pinv) => fit.residual_variance * g.dot(&(pinv * &g)),
                Err(_) => f64::NAN,
            };
            PolarizationResult {
                model,
                order,
                p: p1,
                sigma: d1 * fit.report.sigmas[k1],
                p2: Some(p2),
                sigma_p2: Some(d2 * fit.report.sigmas[k2]),
                net: (2.0 * p1 + p2) / 3.0,
                net_sigma: net_var.max(0.0).sqrt(),
                resolvability,
                fitted: fit.model.clone(),
            }
        }
    };
    Ok((result, fit.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::multiplet_curve;

    #[test]
    fn amplitude_examples() {
        let half = polarization_amplitudes(0.5, LineOrder::Natural).unwrap();
        assert_eq!(half, [0.125, 0.375, 0.375, 0.125]);
        assert_eq!(polarization_amplitudes(1.0, LineOrder::Natural).unwrap(), [0.0, 0.0, 0.0, 1.0]);
        let p = 0.632;
        let w = polarization_amplitudes(p, LineOrder::Natural).unwrap();
        let q: f64 = 1.0 - p;
        let expected = [q.powi(3), 3.0 * p * q * q, 3.0 * p * p * q, p.powi(3)];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((w[0] - 0.049836).abs() < 1e-6);
        assert!((w[3] - 0.252436).abs() < 1e-6);
        let r = polarization_amplitudes(p, LineOrder::Reversed).unwrap();
        assert_eq!(r[0], w[3]);
        assert!(polarization_amplitudes(1.2, LineOrder::Natural).is_err());
    }

    #[test]
    fn pair_law_reduces_and_normalizes() {
        for p in [0.0, 0.1, 0.5, 0.632, 1.0] {
            let a = polarization_amplitudes(p, LineOrder::Natural).unwrap();
            let b = polarization_amplitudes_2(p, p, LineOrder::Natural).unwrap();
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        assert_eq!(polarization_amplitudes_2(1.0, 0.0, LineOrder::Natural).unwrap(), [0.0, 0.0, 1.0, 0.0]);
        for k in 0..1000 {
            let p1 = (k as f64 * 0.618034).fract();
            let p2 = (k as f64 * 0.414214).fract();
            let s: f64 = polarization_amplitudes_2(p1, p2, LineOrder::Natural).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_spectrum_gives_half() {
        let truth = MultipletModel::new(4, AmplitudeLaw::Unpolarized, 1352.0, 65.9, 20.0, 0.03).unwrap();
        let freqs: Vec<f64> = (0..=1600).map(|k| 1000.0 + k as f64 * 0.5).collect();
        let spec = SpectrumSeries::new(freqs.clone(), multiplet_curve(&truth, &freqs)).unwrap();
        let (r, _) = fit_polarization(&spec, PolarizationModel::Single, LineOrder::Reversed, None, &FitOptions::default())
            .unwrap();
        assert!((r.p - 0.5).abs() < 1e-6, "{}", r.p);
    }

    #[test]
    fn unresolved_multiplet_is_rejected() {
        let truth = MultipletModel::new(4, AmplitudeLaw::Unpolarized, 1352.0, 20.0, 60.0, 0.03).unwrap();
        let freqs: Vec<f64> = (0..=1600).map(|k| 1000.0 + k as f64 * 0.5).collect();
        let spec = SpectrumSeries::new(freqs.clone(), multiplet_curve(&truth, &freqs)).unwrap();
        let err = fit_polarization(&spec, PolarizationModel::Single, LineOrder::Natural, Some(&truth), &FitOptions::default());
        assert!(err.is_err());
    }
}
