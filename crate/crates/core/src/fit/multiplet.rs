//! Equally spaced Lorentzian multiplets with constrained amplitude laws.

use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOptions};
use super::polarization::{polarization_amplitudes, polarization_amplitudes_2, LineOrder};
use super::FitReport;
use crate::error::{Error, Result};
use crate::esr::SpectrumSeries;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeLaw {
    /// Fully mixed nuclei: binomial-type degeneracies fixed by the line count.
    Unpolarized,
    /// Three spin-1/2 nuclei, each polarized with probability `P`.
    Polarized,
    /// Two nuclei at `P1`, one at `P2`.
    PolarizedPair,
    /// One free amplitude per line.
    Free,
}

/// Degeneracies of `n` equally spaced lines from a fully mixed bath:
/// 2 and 3 lines for a single spin-1/2 or spin-1, 4 and 7 for three of them.
pub fn unpolarized_amplitudes(n: usize) -> Result<Vec<f64>> {
    let raw: &[f64] = match n {
        1 => &[1.0],
        2 => &[1.0, 1.0],
        3 => &[1.0, 1.0, 1.0],
        4 => &[1.0, 3.0, 3.0, 1.0],
        7 => &[1.0, 3.0, 6.0, 7.0, 6.0, 3.0, 1.0],
        _ => {
            return Err(Error::invalid(format!(
                "no unpolarized degeneracy pattern for {n} lines (use 1, 2, 3, 4 or 7)"
            )))
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|a| a / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipletModel {
    pub n_lines: usize,
    pub law: AmplitudeLaw,
    /// MHz.
    pub center: f64,
    /// Line spacing in MHz. Signed for unpolarized and free laws; polarized
    /// laws place lines by `|splitting|` in ascending frequency.
    pub splitting: f64,
    /// Shared full width at half maximum, MHz.
    pub fwhm: f64,
    pub depth: f64,
    pub baseline: f64,
    /// Relative line amplitudes. Sum to 1 except under the free law, where
    /// they are absolute dip depths and `depth` is 1.
    pub amplitudes: Vec<f64>,
    pub p: Option<f64>,
    pub p2: Option<f64>,
    pub order: LineOrder,
}

impl MultipletModel {
    pub fn new(n_lines: usize, law: AmplitudeLaw, center: f64, splitting: f64, fwhm: f64, depth: f64) -> Result<Self> {
        let mut m = MultipletModel {
            n_lines,
            law,
            center,
            splitting,
            fwhm,
            depth,
            baseline: 1.0,
            amplitudes: Vec::new(),
            p: None,
            p2: None,
            order: LineOrder::Natural,
        };
        match law {
            AmplitudeLaw::Unpolarized => m.amplitudes = unpolarized_amplitudes(n_lines)?,
            AmplitudeLaw::Polarized => m.set_polarization(0.5, None)?,
            AmplitudeLaw::PolarizedPair => m.set_polarization(0.6, Some(0.4))?,
            AmplitudeLaw::Free => {
                if n_lines == 0 {
                    return Err(Error::invalid("need at least one line"));
                }
                m.amplitudes = vec![depth / n_lines as f64; n_lines];
                m.depth = 1.0;
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// Sets the polarization parameters of a polarized law and its amplitudes.
    pub fn set_polarization(&mut self, p: f64, p2: Option<f64>) -> Result<()> {
        if self.n_lines != 4 {
            return Err(Error::invalid("polarized amplitude laws need exactly 4 lines"));
        }
        match (self.law, p2) {
            (AmplitudeLaw::Polarized, None) => {
                self.amplitudes = polarization_amplitudes(p, self.order)?.to_vec();
                self.p = Some(p);
                self.p2 = None;
            }
            (AmplitudeLaw::PolarizedPair, Some(p2)) => {
                self.amplitudes = polarization_amplitudes_2(p, p2, self.order)?.to_vec();
                self.p = Some(p);
                self.p2 = Some(p2);
            }
            _ => return Err(Error::invalid("polarization parameters do not match the amplitude law")),
        }
        Ok(())
    }

    pub fn with_order(mut self, order: LineOrder) -> Result<Self> {
        self.order = order;
        if let Some(p) = self.p {
            self.set_polarization(p, self.p2)?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm > 0.0) || !self.fwhm.is_finite() {
            return Err(Error::invalid(format!("fwhm must be positive, got {}", self.fwhm)));
        }
        if self.amplitudes.len() != self.n_lines {
            return Err(Error::DimensionMismatch {
                expected: self.n_lines,
                actual: self.amplitudes.len(),
            });
        }
        if matches!(self.law, AmplitudeLaw::Polarized | AmplitudeLaw::PolarizedPair) && self.n_lines != 4 {
            return Err(Error::invalid("polarized amplitude laws need exactly 4 lines"));
        }
        Ok(())
    }

    /// Line centers in index order.
    pub fn line_centers(&self) -> Vec<f64> {
        let s = match self.law {
            AmplitudeLaw::Polarized | AmplitudeLaw::PolarizedPair => self.splitting.abs(),
            _ => self.splitting,
        };
        let mid = (self.n_lines as f64 - 1.0) / 2.0;
        (0..self.n_lines)
            .map(|k| self.center + (k as f64 - mid) * s)
            .collect()
    }

    /// Model value at `f`.
    pub fn eval(&self, f: f64) -> f64 {
        let hw = self.fwhm.abs() / 2.0;
        let dip: f64 = self
            .line_centers()
            .iter()
            .zip(&self.amplitudes)
            .map(|(c, a)| {
                let x = (f - c) / hw;
                a / (1.0 + x * x)
            })
            .sum();
        self.baseline - self.depth * dip
    }

    /// `d(model)/df` at `f`, per MHz.
    pub fn derivative(&self, f: f64) -> f64 {
        let hw = self.fwhm.abs() / 2.0;
        let d: f64 = self
            .line_centers()
            .iter()
            .zip(&self.amplitudes)
            .map(|(c, a)| {
                let x = (f - c) / hw;
                a * 2.0 * x / (hw * (1.0 + x * x).powi(2))
            })
            .sum();
        self.depth * d
    }

    /// Rough starting point: a coarse grid search over the line geometry.
    pub fn guess(spec: &SpectrumSeries, n_lines: usize, law: AmplitudeLaw) -> Result<Self> {
        Ok(Self::guess_candidates(spec, n_lines, law, 1)?.remove(0))
    }

    /// Up to `keep` distinct starting points, best first.
    pub(crate) fn guess_candidates(
        spec: &SpectrumSeries,
        n_lines: usize,
        law: AmplitudeLaw,
        keep: usize,
    ) -> Result<Vec<Self>> {
        let n = spec.values.len();
        if n < 8 {
            return Err(Error::invalid("spectrum too short for an initial guess"));
        }
        let edge = (n / 20).max(1);
        let mut edges: Vec<f64> = spec.values[..edge]
            .iter()
            .chain(&spec.values[n - edge..])
            .copied()
            .collect();
        edges.sort_by(f64::total_cmp);
        let baseline = edges[edges.len() / 2];
        let dips: Vec<f64> = spec.values.iter().map(|v| (baseline - v).max(0.0)).collect();
        let max_dip = dips.iter().copied().fold(0.0, f64::max);
        if max_dip <= 0.0 {
            return Err(Error::invalid("spectrum shows no dip"));
        }
        let total: f64 = dips.iter().sum();
        let center = spec.freqs.iter().zip(&dips).map(|(f, d)| f * d).sum::<f64>() / total;

        // smoothed local minima above a fraction of the deepest dip
        let w = (n / 200).max(1);
        let smooth: Vec<f64> = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(w);
                let hi = (i + w + 1).min(n);
                dips[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let peaks: Vec<f64> = (1..n - 1)
            .filter(|&i| smooth[i] > smooth[i - 1] && smooth[i] >= smooth[i + 1] && smooth[i] > 0.15 * max_dip)
            .map(|i| spec.freqs[i])
            .collect();

        // half-maximum extent of the whole dip
        let above: Vec<f64> = spec
            .freqs
            .iter()
            .zip(&smooth)
            .filter(|(_, d)| **d >= 0.5 * max_dip)
            .map(|(f, _)| *f)
            .collect();
        let extent = above.last().unwrap_or(&center) - above.first().unwrap_or(&center);

        let splitting = if n_lines > 1 && peaks.len() == n_lines {
            (peaks[n_lines - 1] - peaks[0]) / (n_lines - 1) as f64
        } else if n_lines > 1 {
            (extent / n_lines as f64).max(spec.freqs[1] - spec.freqs[0])
        } else {
            0.0
        };
        let fwhm = if n_lines > 1 {
            (0.8 * splitting).max(3.0 * (spec.freqs[1] - spec.freqs[0]))
        } else {
            extent.max(3.0 * (spec.freqs[1] - spec.freqs[0]))
        };
        let df = spec.freqs[1] - spec.freqs[0];
        let fallback = (center, splitting, fwhm, baseline, max_dip);
        let mut geometries = if n_lines > 1 {
            let span = dips
                .iter()
                .zip(&spec.freqs)
                .filter(|(d, _)| **d > 0.1 * max_dip)
                .map(|(_, f)| *f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| (lo.min(f), hi.max(f)));
            let span = (span.1 - span.0).max(splitting * n_lines as f64);
            scan_geometry(spec, n_lines, center, span, df, keep.max(1))
        } else {
            Vec::new()
        };
        if geometries.is_empty() {
            geometries.push(fallback);
        }
        let amps = match law {
            AmplitudeLaw::Free => vec![1.0; n_lines.max(1)],
            _ => unpolarized_amplitudes(n_lines).unwrap_or_else(|_| vec![1.0 / n_lines as f64; n_lines]),
        };
        let peak_model: f64 = amps.iter().copied().fold(0.0, f64::max);
        geometries
            .into_iter()
            .map(|(center, splitting, fwhm, baseline, max_dip)| {
                let mut m =
                    MultipletModel::new(n_lines, law, center, splitting, fwhm, max_dip / peak_model.max(1e-12))?;
                m.baseline = baseline;
                if law == AmplitudeLaw::Free {
                    m.amplitudes = vec![max_dip; n_lines];
                }
                Ok(m)
            })
            .collect()
    }
}

type Geometry = (f64, f64, f64, f64, f64);

/// Grid search over center, spacing and width with the line amplitudes
/// and baseline solved linearly at each point. Returns up to `keep` local
/// minima along the spacing axis, best first, each as
/// `(center, splitting, fwhm, baseline, largest amplitude)`.
fn scan_geometry(spec: &SpectrumSeries, n_lines: usize, center0: f64, span: f64, df: f64, keep: usize) -> Vec<Geometry> {
    use nalgebra::{DMatrix, DVector};

    let stride = (spec.freqs.len() / 300).max(1);
    let pts: Vec<(f64, f64)> = spec
        .freqs
        .iter()
        .zip(&spec.values)
        .step_by(stride)
        .map(|(f, v)| (*f, *v))
        .collect();
    let yy: f64 = pts.iter().map(|p| p.1 * p.1).sum();
    let log_step = |lo: f64, hi: f64, n: usize, k: usize| lo * (hi / lo).powf(k as f64 / (n - 1) as f64);
    let s_lo = (2.0 * df.abs()).max(span * 1e-3);
    let s_hi = span / (n_lines - 1) as f64;
    if !(s_hi > s_lo) {
        return Vec::new();
    }
    let m = n_lines + 1;
    let mid = (n_lines as f64 - 1.0) / 2.0;
    let mut row = vec![0.0; m];
    let (ns, nw, nc) = (32, 8, 33);
    let mut profile: Vec<Option<(f64, Geometry)>> = vec![None; ns];
    for (ks, best) in profile.iter_mut().enumerate() {
        let s = log_step(s_lo, s_hi, ns, ks);
        for kw in 0..nw {
            let w = log_step(2.0 * df.abs(), 2.0 * s, nw, kw);
            let hw = w / 2.0;
            for kc in 0..nc {
                let c = center0 - s + 2.0 * s * kc as f64 / (nc - 1) as f64;
                let mut ata = DMatrix::<f64>::zeros(m, m);
                let mut aty = DVector::<f64>::zeros(m);
                for &(f, y) in &pts {
                    for (j, r) in row.iter_mut().enumerate().take(n_lines) {
                        let x = (f - c - (j as f64 - mid) * s) / hw;
                        *r = -1.0 / (1.0 + x * x);
                    }
                    row[n_lines] = 1.0;
                    for i in 0..m {
                        aty[i] += row[i] * y;
                        for j in i..m {
                            ata[(i, j)] += row[i] * row[j];
                        }
                    }
                }
                for i in 0..m {
                    for j in 0..i {
                        ata[(i, j)] = ata[(j, i)];
                    }
                }
                let Some(chol) = ata.cholesky() else { continue };
                let x = chol.solve(&aty);
                if x.iter().take(n_lines).any(|v| *v < 0.0) {
                    continue;
                }
                // |Ax - y|^2 = y.y - x.(A^T y) at the normal-equation solution
                let cost = yy - x.dot(&aty);
                if best.as_ref().map_or(true, |b| cost < b.0) {
                    let amax = x.iter().take(n_lines).copied().fold(0.0, f64::max);
                    *best = Some((cost, (c, s, w, x[n_lines], amax)));
                }
            }
        }
    }
    let cost_at = |k: usize| profile[k].map_or(f64::INFINITY, |b| b.0);
    let mut minima: Vec<(f64, Geometry)> = (0..ns)
        .filter(|&k| {
            let c = cost_at(k);
            c.is_finite() && (k == 0 || c <= cost_at(k - 1)) && (k + 1 == ns || c <= cost_at(k + 1))
        })
        .filter_map(|k| profile[k])
        .filter(|b| b.1 .4 > 0.0)
        .collect();
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    minima.into_iter().take(keep).map(|b| b.1).collect()
}

/// Evaluates the model on a frequency grid.
pub fn multiplet_curve(model: &MultipletModel, freqs: &[f64]) -> Vec<f64> {
    freqs.iter().map(|f| model.eval(*f)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FitOptions {
    pub lm: LmOptions,
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Parameter layout shared by packing, unpacking and reporting.
struct Layout {
    names: Vec<String>,
    has_splitting: bool,
}

impl Layout {
    fn for_model(m: &MultipletModel) -> Self {
        let has_splitting = m.n_lines > 1;
        let mut names = vec!["center".to_string()];
        if has_splitting {
            names.push("splitting".into());
        }
        names.push("fwhm".into());
        names.push("baseline".into());
        match m.law {
            AmplitudeLaw::Unpolarized => names.push("depth".into()),
            AmplitudeLaw::Polarized => {
                names.push("depth".into());
                names.push("logit_p".into());
            }
            AmplitudeLaw::PolarizedPair => {
                names.push("depth".into());
                names.push("logit_p1".into());
                names.push("logit_p2".into());
            }
            AmplitudeLaw::Free => {
                for k in 0..m.n_lines {
                    names.push(format!("amplitude_{k}"));
                }
            }
        }
        Layout { names, has_splitting }
    }

    fn pack(&self, m: &MultipletModel) -> Vec<f64> {
        let mut p = vec![m.center];
        if self.has_splitting {
            p.push(m.splitting);
        }
        p.push(m.fwhm);
        p.push(m.baseline);
        match m.law {
            AmplitudeLaw::Unpolarized => p.push(m.depth),
            AmplitudeLaw::Polarized => {
                p.push(m.depth);
                p.push(logit(m.p.unwrap_or(0.5)));
            }
            AmplitudeLaw::PolarizedPair => {
                p.push(m.depth);
                p.push(logit(m.p.unwrap_or(0.6)));
                p.push(logit(m.p2.unwrap_or(0.4)));
            }
            AmplitudeLaw::Free => p.extend(m.amplitudes.iter().map(|a| a * m.depth)),
        }
        p
    }

    fn unpack(&self, template: &MultipletModel, p: &[f64]) -> Result<MultipletModel> {
        let mut m = template.clone();
        let mut i = 0;
        let mut next = || {
            let v = p[i];
            i += 1;
            v
        };
        m.center = next();
        if self.has_splitting {
            m.splitting = next();
        }
        m.fwhm = next().abs();
        m.baseline = next();
        match m.law {
            AmplitudeLaw::Unpolarized => m.depth = next(),
            AmplitudeLaw::Polarized => {
                m.depth = next();
                let pp = logistic(next());
                m.set_polarization(pp, None)?;
            }
            AmplitudeLaw::PolarizedPair => {
                m.depth = next();
                let p1 = logistic(next());
                let p2 = logistic(next());
                m.set_polarization(p1, Some(p2))?;
            }
            AmplitudeLaw::Free => {
                m.depth = 1.0;
                m.amplitudes = (0..m.n_lines).map(|_| next()).collect();
            }
        }
        Ok(m)
    }
}

pub(crate) struct MultipletFit {
    pub model: MultipletModel,
    pub report: FitReport,
    pub normal_matrix: nalgebra::DMatrix<f64>,
    pub residual_variance: f64,
}

pub(crate) fn fit_multiplet_full(
    spec: &SpectrumSeries,
    init: &MultipletModel,
    options: &FitOptions,
) -> Result<MultipletFit> {
    init.validate()?;
    if init.law == AmplitudeLaw::Unpolarized {
        unpolarized_amplitudes(init.n_lines)?;
    }
    let n = spec.freqs.len();
    if n < 2 {
        return Err(Error::invalid("spectrum has fewer than two points"));
    }
    let covered = spec.freqs[n - 1] - spec.freqs[0];
    let span = ((init.n_lines as f64 - 1.0) * init.splitting.abs()).max(init.fwhm);
    if covered < 2.0 * span {
        return Err(Error::invalid(format!(
            "spectrum covers {covered} MHz, less than twice the multiplet span {span} MHz"
        )));
    }
    let layout = Layout::for_model(init);
    let p0 = layout.pack(init);
    if p0.len() >= n {
        return Err(Error::invalid("more parameters than spectrum points"));
    }
    let residuals = |p: &[f64]| -> Vec<f64> {
        match layout.unpack(init, p) {
            Ok(m) if m.fwhm > 0.0 => spec
                .freqs
                .iter()
                .zip(&spec.values)
                .map(|(f, y)| m.eval(*f) - y)
                .collect(),
            _ => vec![f64::NAN; n],
        }
    };
    let out = levenberg_marquardt(residuals, &p0, &options.lm)?;
    let model = layout.unpack(init, &out.params)?;
    let report = FitReport {
        parameter_names: layout.names.clone(),
        values: out.params.clone(),
        sigmas: out.sigmas.clone(),
        residual_norm: out.cost.sqrt(),
        reduced_chi2: if out.dof > 0 { out.cost / out.dof as f64 } else { 0.0 },
        iterations: out.iterations,
        converged: true,
        dof: out.dof,
    };
    Ok(MultipletFit {
        model,
        report,
        normal_matrix: out.normal_matrix,
        residual_variance: out.residual_variance,
    })
}

/// Least-squares fit of a multiplet to `spec`, starting from `init`
/// (see [`MultipletModel::guess`]). The amplitude law and line count come
/// from `init`.
pub fn fit_multiplet(
    spec: &SpectrumSeries,
    init: &MultipletModel,
    options: &FitOptions,
) -> Result<(MultipletModel, FitReport)> {
    fit_multiplet_full(spec, init, options).map(|f| (f.model, f.report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|k| lo + k as f64 * step).collect()
    }

    #[test]
    fn unpolarized_patterns() {
        assert_eq!(unpolarized_amplitudes(4).unwrap(), vec![0.125, 0.375, 0.375, 0.125]);
        let seven = unpolarized_amplitudes(7).unwrap();
        assert!((seven[3] - 7.0 / 27.0).abs() < 1e-15);
        assert!((seven.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(unpolarized_amplitudes(5).is_err());
    }

    #[test]
    fn single_lorentzian_exact_recovery() {
        let truth = MultipletModel::new(1, AmplitudeLaw::Unpolarized, 1352.0, 0.0, 12.0, 0.04).unwrap();
        let freqs = grid(1300.0, 1400.0, 0.5);
        let spec = SpectrumSeries::new(freqs.clone(), multiplet_curve(&truth, &freqs)).unwrap();
        let init = MultipletModel::guess(&spec, 1, AmplitudeLaw::Unpolarized).unwrap();
        let (m, report) = fit_multiplet(&spec, &init, &FitOptions::default()).unwrap();
        assert!((m.center - 1352.0).abs() < 1e-8);
        assert!((m.fwhm - 12.0).abs() < 1e-8);
        assert!((m.depth - 0.04).abs() < 1e-8 * 0.04 / 0.04);
        assert!(report.residual_norm < 1e-8);
    }

    #[test]
    fn noiseless_quartet_recovery() {
        let truth = MultipletModel::new(4, AmplitudeLaw::Unpolarized, 1352.0, -65.9, 55.0, 0.03).unwrap();
        let freqs = grid(1000.0, 1700.0, 0.5);
        let spec = SpectrumSeries::new(freqs.clone(), multiplet_curve(&truth, &freqs)).unwrap();
        let mut init = MultipletModel::guess(&spec, 4, AmplitudeLaw::Unpolarized).unwrap();
        init.splitting = -init.splitting.abs();
        let (m, _) = fit_multiplet(&spec, &init, &FitOptions::default()).unwrap();
        assert!((m.splitting + 65.9).abs() < 1e-6 * 65.9);
        assert!((m.fwhm - 55.0).abs() < 1e-6 * 55.0);
    }

    #[test]
    fn narrow_spectrum_is_rejected() {
        let truth = MultipletModel::new(4, AmplitudeLaw::Unpolarized, 0.0, 10.0, 3.0, 0.1).unwrap();
        let freqs = grid(-20.0, 20.0, 0.1);
        let spec = SpectrumSeries::new(freqs.clone(), multiplet_curve(&truth, &freqs)).unwrap();
        assert!(fit_multiplet(&spec, &truth, &FitOptions::default()).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let m = MultipletModel::new(4, AmplitudeLaw::Unpolarized, 10.0, 7.0, 3.0, 0.1).unwrap();
        for f in [0.0, 5.3, 10.0, 17.2] {
            let h = 1e-5;
            let fd = (m.eval(f + h) - m.eval(f - h)) / (2.0 * h);
            assert!((fd - m.derivative(f)).abs() < 1e-8);
        }
    }
}
