//! Exact diagonalization, nuclear resonance spectra and driven time evolution
//! of the defect with its explicitly modeled nuclei.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::effective::DriveSpec;
use crate::error::{Error, Result};
use crate::esr::SpectrumSeries;
use crate::format;
use crate::hamiltonian::{build_hamiltonian, DefectModel, FieldConfig};
use crate::spin::{CMatrix, EmbeddedSpins, Operator, SpinRegister};

pub const MAX_DIAG_DIM: usize = 64;
const RESIDUAL_TOL: f64 = 1e-9;
const UNITARITY_TOL: f64 = 1e-10;
const DEGENERACY_TOL: f64 = 1e-9;
/// Samples per shortest period demanded by the step guard.
pub const STEPS_PER_PERIOD: f64 = 50.0;

/// Dominant product-basis component of an eigenstate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StateLabel {
    pub basis_index: usize,
    /// `2 m_s` of the dominant component.
    pub two_ms: i32,
    /// `2 sum_j m_j` over the nuclei.
    pub two_sum_mi: i32,
    /// Weight `|c|^2` of the dominant component.
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub energies: Vec<f64>,
    /// Column `k` is the eigenvector of `energies[k]`.
    pub states: CMatrix,
    pub labels: Vec<StateLabel>,
    pub register: SpinRegister,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn state(&self, k: usize) -> DVector<Complex64> {
        self.states.column(k).into_owned()
    }

    pub fn select(&self, selector: &ManifoldSelector) -> Vec<usize> {
        (0..self.dim())
            .filter(|&k| selector.matches(&self.labels[k]))
            .collect()
    }

    /// `max_k ||H v_k - E_k v_k||`.
    pub fn max_residual(&self, h: &Operator) -> f64 {
        let hv = h.matrix() * &self.states;
        (0..self.dim())
            .map(|k| {
                let r = hv.column(k) - self.states.column(k) * Complex64::new(self.energies[k], 0.0);
                r.norm()
            })
            .fold(0.0, f64::max)
    }

    /// `max |V^dagger V - 1|`.
    pub fn unitarity_defect(&self) -> f64 {
        let g = self.states.adjoint() * &self.states;
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((g[(r, c)] - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

fn matrix_norm(h: &Operator) -> f64 {
    h.matrix().norm()
}

/// Full Hermitian eigendecomposition with ascending energies.
///
/// Degenerate subspaces are rotated to diagonalize a fixed weighted sum of the
/// `Sz`/`Iz` operators, and each vector's largest component is made real and
/// positive, so the returned basis is reproducible.
pub fn diagonalize(h: &Operator, register: &SpinRegister) -> Result<EigenSystem> {
    if !h.is_hermitian() {
        return Err(Error::invalid("diagonalize requires a Hermitian-flagged operator"));
    }
    let n = h.dim();
    if n > MAX_DIAG_DIM {
        return Err(Error::invalid(format!("dimension {n} exceeds the limit of {MAX_DIAG_DIM}")));
    }
    if n != register.total_dim() {
        return Err(Error::DimensionMismatch {
            expected: register.total_dim(),
            actual: n,
        });
    }
    let eig = SymmetricEigen::new(h.matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut states = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);

    let scale = matrix_norm(h).max(1.0);
    canonicalize_degenerate(&energies, &mut states, register, DEGENERACY_TOL * scale)?;
    fix_phases(&mut states);

    let labels = (0..n).map(|k| label_state(&states, k, register)).collect();
    let sys = EigenSystem {
        energies,
        states,
        labels,
        register: register.clone(),
    };
    let residual = sys.max_residual(h);
    if residual > RESIDUAL_TOL * scale {
        return Err(Error::Internal(format!("eigen residual {residual:e} exceeds bound")));
    }
    let defect = sys.unitarity_defect();
    if defect > UNITARITY_TOL {
        return Err(Error::Internal(format!("eigenvectors deviate from unitarity by {defect:e}")));
    }
    Ok(sys)
}

fn canonicalize_degenerate(
    energies: &[f64],
    states: &mut CMatrix,
    register: &SpinRegister,
    tol: f64,
) -> Result<()> {
    let n = energies.len();
    let mut start = 0;
    let mut key: Option<CMatrix> = None;
    while start < n {
        let mut end = start + 1;
        while end < n && energies[end] - energies[end - 1] <= tol {
            end += 1;
        }
        if end - start > 1 {
            let key = match &key {
                Some(k) => k,
                None => key.insert(ordering_operator(register)?),
            };
            let block = states.columns(start, end - start).into_owned();
            let projected = block.adjoint() * key * &block;
            let sub = SymmetricEigen::new((&projected + projected.adjoint()) * Complex64::new(0.5, 0.0));
            let mut sub_order: Vec<usize> = (0..end - start).collect();
            sub_order.sort_by(|&a, &b| sub.eigenvalues[a].total_cmp(&sub.eigenvalues[b]).then(a.cmp(&b)));
            let rotated = &block * &sub.eigenvectors;
            for (dst, &src) in sub_order.iter().enumerate() {
                states.set_column(start + dst, &rotated.column(src));
            }
        }
        start = end;
    }
    Ok(())
}

/// Diagonal operator with distinct weights on each site's `Sz`.
fn ordering_operator(register: &SpinRegister) -> Result<CMatrix> {
    let spins = EmbeddedSpins::new(register)?;
    let mut acc = spins.sites[0].sz.matrix().clone();
    for (j, site) in spins.sites.iter().enumerate().skip(1) {
        let w = 1.0 / (3.0 + j as f64 * std::f64::consts::SQRT_2);
        acc += site.sz.matrix() * Complex64::new(w, 0.0);
    }
    Ok(acc)
}

fn fix_phases(states: &mut CMatrix) {
    for k in 0..states.ncols() {
        let mut best = 0;
        let mut best_mag = -1.0;
        for r in 0..states.nrows() {
            let m = states[(r, k)].norm_sqr();
            if m > best_mag + 1e-12 {
                best = r;
                best_mag = m;
            }
        }
        let c = states[(best, k)];
        let phase = c.conj() / c.norm();
        for r in 0..states.nrows() {
            states[(r, k)] *= phase;
        }
    }
}

fn label_state(states: &CMatrix, k: usize, register: &SpinRegister) -> StateLabel {
    let mut best = 0;
    let mut best_w = -1.0;
    for r in 0..states.nrows() {
        let w = states[(r, k)].norm_sqr();
        if w > best_w + 1e-12 {
            best = r;
            best_w = w;
        }
    }
    let two_ms = register.decode(best);
    StateLabel {
        basis_index: best,
        two_ms: two_ms[0],
        two_sum_mi: two_ms[1..].iter().sum(),
        weight: best_w,
    }
}

/// Picks eigenstates by their dominant `(m_s, sum m_I)` assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ManifoldSelector {
    pub two_ms: Option<i32>,
    pub two_sum_mi: Option<i32>,
}

impl ManifoldSelector {
    /// `m_s = -1`, `sum m_I = 1/2`.
    pub const NUCLEAR_DEFAULT: ManifoldSelector = ManifoldSelector {
        two_ms: Some(-2),
        two_sum_mi: Some(1),
    };

    pub fn matches(&self, label: &StateLabel) -> bool {
        self.two_ms.is_none_or(|m| m == label.two_ms) && self.two_sum_mi.is_none_or(|m| m == label.two_sum_mi)
    }
}

impl Default for ManifoldSelector {
    fn default() -> Self {
        Self::NUCLEAR_DEFAULT
    }
}

/// How a transition's strength is computed from the probe matrix elements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeRule {
    /// `|<f|X|i>| + |<f|Y|i>|`.
    #[default]
    SumOfMagnitudes,
    /// `|<f|X|i>|^2 + |<f|Y|i>|^2`; invariant under re-mixing degenerate states.
    Intensity,
}

/// Pair of transverse operators probed by a transition.
#[derive(Clone, Debug)]
pub struct DriveOperators {
    pub x: Operator,
    pub y: Operator,
}

impl DriveOperators {
    /// Electronic `Sx`, `Sy`.
    pub fn electron(register: &SpinRegister) -> Result<Self> {
        let spins = EmbeddedSpins::new(register)?;
        Ok(DriveOperators {
            x: spins.electron().sx.clone(),
            y: spins.electron().sy.clone(),
        })
    }

    /// Full Zeeman coupling per gauss: `gamma_e S - sum_j gamma_n^j I^j`.
    pub fn zeeman(model: &DefectModel) -> Result<Self> {
        let register = model.register();
        let spins = EmbeddedSpins::new(&register)?;
        let mut x = spins.electron().sx.scale(model.gamma_e);
        let mut y = spins.electron().sy.scale(model.gamma_e);
        for (j, n) in model.nuclei.iter().enumerate() {
            let g = n.species.gamma()?;
            x = &x - &spins.nucleus(j).sx.scale(g);
            y = &y - &spins.nucleus(j).sy.scale(g);
        }
        Ok(DriveOperators {
            x: x.into_hermitian()?,
            y: y.into_hermitian()?,
        })
    }

    /// `cos(theta) X + sin(theta) Y`.
    pub fn along(&self, theta: f64) -> Operator {
        let (s, c) = theta.sin_cos();
        &self.x.scale(c) + &self.y.scale(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransitionLine {
    pub delta_e: f64,
    pub amplitude: f64,
    pub from_index: usize,
    pub to_index: usize,
}

#[derive(Clone, Debug)]
pub struct TransitionOptions {
    pub rule: AmplitudeRule,
    /// Probe operators; the electronic `Sx`, `Sy` when `None`.
    pub probe: Option<DriveOperators>,
    /// Spacing of the output grid in MHz.
    pub grid_step: f64,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        TransitionOptions {
            rule: AmplitudeRule::SumOfMagnitudes,
            probe: None,
            grid_step: 0.005,
        }
    }
}

/// Default band around the nuclear transitions, MHz.
pub const NUCLEAR_BAND: (f64, f64) = (30.0, 100.0);
pub const DEFAULT_FWHM: f64 = 2.0;

/// Transitions from the selected states to every state with `|dE|` in `band`.
pub fn transition_lines(
    eig: &EigenSystem,
    selector: &ManifoldSelector,
    band: (f64, f64),
    options: &TransitionOptions,
) -> Result<Vec<TransitionLine>> {
    let initial = eig.select(selector);
    if initial.is_empty() {
        return Err(Error::invalid(format!("no eigenstate matches selector {selector:?}")));
    }
    let probe = match &options.probe {
        Some(p) => p.clone(),
        None => DriveOperators::electron(&eig.register)?,
    };
    let vdag = eig.states.adjoint();
    let mx = &vdag * probe.x.matrix() * &eig.states;
    let my = &vdag * probe.y.matrix() * &eig.states;
    let mut lines = Vec::new();
    for &i in &initial {
        for f in 0..eig.dim() {
            let delta_e = (eig.energies[f] - eig.energies[i]).abs();
            if delta_e < band.0 || delta_e > band.1 {
                continue;
            }
            let (ax, ay) = (mx[(f, i)].norm(), my[(f, i)].norm());
            let amplitude = match options.rule {
                AmplitudeRule::SumOfMagnitudes => ax + ay,
                AmplitudeRule::Intensity => ax * ax + ay * ay,
            };
            lines.push(TransitionLine {
                delta_e,
                amplitude,
                from_index: i,
                to_index: f,
            });
        }
    }
    Ok(lines)
}

/// Sum of peak-normalized Lorentzians of width `fwhm`, weighted by amplitude.
pub fn transition_spectrum(
    eig: &EigenSystem,
    selector: &ManifoldSelector,
    band: (f64, f64),
    fwhm: f64,
    options: &TransitionOptions,
) -> Result<SpectrumSeries> {
    if !(fwhm > 0.0) {
        return Err(Error::invalid(format!("fwhm must be positive, got {fwhm}")));
    }
    if !(band.1 > band.0) {
        return Err(Error::invalid("band must be ascending"));
    }
    if !(options.grid_step > 0.0) {
        return Err(Error::invalid("grid step must be positive"));
    }
    let lines = transition_lines(eig, selector, band, options)?;
    let n = ((band.1 - band.0) / options.grid_step).round() as usize + 1;
    let hw = fwhm / 2.0;
    let freqs: Vec<f64> = (0..n).map(|k| band.0 + k as f64 * options.grid_step).collect();
    let values = freqs
        .iter()
        .map(|f| {
            lines
                .iter()
                .map(|l| {
                    let x = (f - l.delta_e) / hw;
                    l.amplitude / (1.0 + x * x)
                })
                .sum()
        })
        .collect();
    Ok(SpectrumSeries::new(freqs, values)?
        .with_meta("fwhm_MHz", format::fmt_num(fwhm))
        .with_meta("lines", lines.len()))
}

/// Frequency of the strongest point of the transition spectrum.
pub fn dominant_line(spectrum: &SpectrumSeries) -> Result<f64> {
    spectrum
        .argmax()
        .ok_or_else(|| Error::invalid("empty spectrum"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PopulationTrace {
    pub times: Vec<f64>,
    /// One series per observable.
    pub populations: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    /// Largest `|<psi|psi> - 1|` seen at the samples.
    pub norm_drift: f64,
}

impl PopulationTrace {
    pub fn series(&self, k: usize) -> &[f64] {
        &self.populations[k]
    }

    /// Writes `time_us,population` for the first observable.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        format::write_columns(path, ["time_us", "population"], &self.times, &self.populations[0])
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (times, pops, _) =
            format::read_columns(path, &[("time_us", 1.0), ("time_ns", 1e-3)], "population")?;
        Ok(PopulationTrace {
            times,
            populations: vec![pops],
            labels: vec!["population".into()],
            norm_drift: 0.0,
        })
    }
}

/// `exp(-2 pi i H tau)` of a Hermitian matrix.
fn hermitian_exp(h: &CMatrix, tau: f64) -> CMatrix {
    let eig = SymmetricEigen::new(h.clone());
    let n = h.nrows();
    let phases = DVector::from_fn(n, |k, _| Complex64::from_polar(1.0, -2.0 * PI * eig.eigenvalues[k] * tau));
    let mut scaled = eig.eigenvectors.clone();
    for c in 0..n {
        let p = phases[c];
        for r in 0..n {
            scaled[(r, c)] *= p;
        }
    }
    scaled * eig.eigenvectors.adjoint()
}

/// Polar factor `U V^H` of the SVD.
fn nearest_unitary(m: &CMatrix) -> CMatrix {
    let svd = m.clone().svd(true, true);
    svd.u.expect("requested") * svd.v_t.expect("requested")
}

fn spectral_width(h: &Operator) -> f64 {
    let ev = SymmetricEigen::new(h.matrix().clone()).eigenvalues;
    let max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Largest step the guard accepts for `h0` under `drive`.
pub fn max_step(h0: &Operator, drive: &DriveSpec) -> f64 {
    let scale = spectral_width(h0).max(drive.freq.abs()).max(1e-12);
    1.0 / (STEPS_PER_PERIOD * scale)
}

/// Time-dependent propagator for `H0 + cos(2 pi f t + phase) B_dr (cos th X + sin th Y)`.
///
/// One drive period is split into `M` equal fourth-order Magnus steps; the step
/// products are cached so any sample time costs a period power and one partial
/// product.
pub struct Propagator {
    h0: CMatrix,
    coupling: CMatrix,
    drive: DriveSpec,
    period: f64,
    step: f64,
    /// `partial[r]` propagates from 0 to `r * step`; `partial[M]` is one period.
    partial: Vec<CMatrix>,
    static_only: bool,
}

impl Propagator {
    pub fn new(h0: &Operator, drive: &DriveSpec, ops: &DriveOperators, dt: f64) -> Result<Self> {
        drive.validate()?;
        if !h0.is_hermitian() {
            return Err(Error::invalid("static Hamiltonian must be Hermitian-flagged"));
        }
        if ops.x.dim() != h0.dim() || ops.y.dim() != h0.dim() {
            return Err(Error::DimensionMismatch {
                expected: h0.dim(),
                actual: ops.x.dim(),
            });
        }
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        let suggested = max_step(h0, drive);
        if dt > suggested {
            return Err(Error::StepTooLarge { dt, suggested });
        }
        let coupling = ops.along(drive.theta).scale(drive.b_dr).into_matrix();
        let static_only = drive.b_dr == 0.0 || coupling.norm() == 0.0;
        if static_only || drive.freq == 0.0 {
            // a static field is time independent; fold it into H0
            let h = h0.matrix() + coupling * Complex64::new(drive.phase.cos(), 0.0);
            let n = h.nrows();
            return Ok(Propagator {
                h0: h,
                coupling: CMatrix::zeros(n, n),
                drive: *drive,
                period: f64::INFINITY,
                step: dt,
                partial: Vec::new(),
                static_only: true,
            });
        }
        let period = 1.0 / drive.freq.abs();
        let m = (period / dt).ceil().max(1.0) as usize;
        let step = period / m as f64;
        let h0m = h0.matrix().clone();
        let steps: Vec<CMatrix> = (0..m)
            .into_par_iter()
            .map(|r| magnus_step(&h0m, &coupling, drive, r as f64 * step, step))
            .collect();
        let n = h0m.nrows();
        let mut partial = Vec::with_capacity(m + 1);
        partial.push(CMatrix::identity(n, n));
        for u in &steps {
            let next = u * partial.last().expect("non-empty");
            partial.push(next);
        }
        // rounding in the long product chain otherwise shows up as norm drift
        partial.par_iter_mut().for_each(|p| *p = nearest_unitary(p));
        Ok(Propagator {
            h0: h0m,
            coupling,
            drive: *drive,
            period,
            step,
            partial,
            static_only: false,
        })
    }

    /// Effective step after fitting an integer number into one drive period.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// States at each sorted sample time, starting from `psi0` at t = 0.
    pub fn evolve_state(&self, psi0: &DVector<Complex64>, times: &[f64]) -> Result<Vec<DVector<Complex64>>> {
        if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
            return Err(Error::invalid("sample times must be non-negative and ascending"));
        }
        if self.static_only {
            let eig = SymmetricEigen::new(self.h0.clone());
            let coeffs = eig.eigenvectors.adjoint() * psi0;
            return Ok(times
                .iter()
                .map(|&t| {
                    let c = DVector::from_fn(coeffs.len(), |k, _| {
                        coeffs[k] * Complex64::from_polar(1.0, -2.0 * PI * eig.eigenvalues[k] * t)
                    });
                    &eig.eigenvectors * c
                })
                .collect());
        }
        let m = self.partial.len() - 1;
        let u_period = &self.partial[m];
        let mut q_done = 0usize;
        let mut boundary = psi0.clone();
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let q = (t / self.period).floor() as usize;
            while q_done < q {
                boundary = u_period * &boundary;
                q_done += 1;
            }
            let within = t - q as f64 * self.period;
            let r = ((within / self.step).floor() as usize).min(m);
            let mut psi = &self.partial[r] * &boundary;
            let rest = within - r as f64 * self.step;
            if rest > 0.0 {
                psi = magnus_step(&self.h0, &self.coupling, &self.drive, r as f64 * self.step, rest) * psi;
            }
            out.push(psi);
        }
        Ok(out)
    }
}

fn drive_factor(drive: &DriveSpec, t: f64) -> f64 {
    (2.0 * PI * drive.freq * t + drive.phase).cos()
}

/// Fourth-order commutator-free Magnus step over `[t0, t0 + tau]`, sampled at
/// the two Gauss points.
fn magnus_step(h0: &CMatrix, coupling: &CMatrix, drive: &DriveSpec, t0: f64, tau: f64) -> CMatrix {
    let s = 3f64.sqrt() / 6.0;
    let c1 = drive_factor(drive, t0 + (0.5 - s) * tau);
    let c2 = drive_factor(drive, t0 + (0.5 + s) * tau);
    let (a1, a2) = ((3.0 - 2.0 * 3f64.sqrt()) / 12.0, (3.0 + 2.0 * 3f64.sqrt()) / 12.0);
    let first = h0 * Complex64::new(0.5, 0.0) + coupling * Complex64::new(a2 * c1 + a1 * c2, 0.0);
    let second = h0 * Complex64::new(0.5, 0.0) + coupling * Complex64::new(a1 * c1 + a2 * c2, 0.0);
    hermitian_exp(&second, tau) * hermitian_exp(&first, tau)
}

/// Populations `<psi|P_k|psi>` over time for each observable `P_k`.
pub fn evolve(
    h0: &Operator,
    drive: &DriveSpec,
    ops: &DriveOperators,
    psi0: &DVector<Complex64>,
    times: &[f64],
    dt: f64,
    observables: &[Operator],
) -> Result<PopulationTrace> {
    let norm = psi0.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!("initial state norm {norm} is not 1")));
    }
    let prop = Propagator::new(h0, drive, ops, dt)?;
    let states = prop.evolve_state(psi0, times)?;
    let mut drift: f64 = 0.0;
    let populations = observables
        .iter()
        .map(|p| states.iter().map(|psi| p.expectation(psi).re).collect())
        .collect();
    for psi in &states {
        drift = drift.max((psi.norm_squared() - 1.0).abs());
    }
    Ok(PopulationTrace {
        times: times.to_vec(),
        populations,
        labels: (0..observables.len()).map(|k| format!("observable {k}")).collect(),
        norm_drift: drift,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RabiOutcome {
    pub trace: PopulationTrace,
    /// Step actually used, MHz^-1.
    pub dt: f64,
    pub initial_energies: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Operating window of the nuclear Rabi protocol, G.
pub const RABI_FIELD_WINDOW: (f64, f64) = (600.0, 900.0);

/// Driven nuclear Rabi oscillation from the `(m_s=-1, sum m_I=1/2)` manifold.
///
/// Each eigenstate of that manifold is evolved separately and the population
/// remaining in the manifold is averaged over the runs. `dt` defaults to the
/// guard limit.
pub fn simulate_nuclear_rabi(
    model: &DefectModel,
    field: &FieldConfig,
    drive: &DriveSpec,
    times: &[f64],
    dt: Option<f64>,
) -> Result<RabiOutcome> {
    let mut warnings = Vec::new();
    if field.bz < RABI_FIELD_WINDOW.0 || field.bz > RABI_FIELD_WINDOW.1 {
        let w = format!(
            "Bz = {} G lies outside the {}-{} G operating window of the protocol",
            field.bz, RABI_FIELD_WINDOW.0, RABI_FIELD_WINDOW.1
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let h0 = build_hamiltonian(model, field)?;
    let register = model.register();
    let eig = diagonalize(&h0, &register)?;
    let manifold = eig.select(&ManifoldSelector::NUCLEAR_DEFAULT);
    if manifold.is_empty() {
        return Err(Error::invalid("no eigenstate in the m_s=-1, sum m_I=1/2 manifold"));
    }
    let ops = DriveOperators::zeeman(model)?;
    let dt = dt.unwrap_or_else(|| max_step(&h0, drive));
    let prop = Propagator::new(&h0, drive, &ops, dt)?;

    let projector_vecs: Vec<DVector<Complex64>> = manifold.iter().map(|&k| eig.state(k)).collect();
    let runs: Vec<(Vec<f64>, f64)> = manifold
        .par_iter()
        .map(|&k| {
            let states = prop.evolve_state(&eig.state(k), times)?;
            let mut drift: f64 = 0.0;
            let pops = states
                .iter()
                .map(|psi| {
                    drift = drift.max((psi.norm_squared() - 1.0).abs());
                    projector_vecs.iter().map(|v| v.dotc(psi).norm_sqr()).sum()
                })
                .collect();
            Ok((pops, drift))
        })
        .collect::<Result<_>>()?;

    let n = runs.len() as f64;
    let population: Vec<f64> = (0..times.len())
        .map(|i| runs.iter().map(|r| r.0[i]).sum::<f64>() / n)
        .collect();
    let drift = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(RabiOutcome {
        trace: PopulationTrace {
            times: times.to_vec(),
            populations: vec![population],
            labels: vec!["m_s=-1, sum m_I=1/2".into()],
            norm_drift: drift,
        },
        dt: prop.step(),
        initial_energies: manifold.iter().map(|&k| eig.energies[k]).collect(),
        warnings,
    })
}

/// Evenly spaced sample times `0, step, ..., <= duration`.
pub fn uniform_times(duration: f64, step: f64) -> Vec<f64> {
    let n = (duration / step + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

/// Local maxima of the Hann-windowed, zero-padded amplitude spectrum of a
/// uniformly sampled series, strongest first, refined by parabolic
/// interpolation. Returns `(frequency, relative amplitude)`.
pub fn spectrum_peaks(values: &[f64], sample_step: f64, max_peaks: usize) -> Vec<(f64, f64)> {
    let n = values.len();
    if n < 4 {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let padded_len = (8 * n).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); padded_len];
    for (k, v) in values.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos();
        buf[k] = Complex64::new((v - mean) * w, 0.0);
    }
    FftPlanner::<f64>::new().plan_fft_forward(padded_len).process(&mut buf);
    let mag: Vec<f64> = buf[..padded_len / 2].iter().map(|c| c.norm()).collect();
    let top = mag.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Vec::new();
    }
    let df = 1.0 / (padded_len as f64 * sample_step);
    let mut peaks: Vec<(f64, f64)> = (1..mag.len() - 1)
        .filter(|&k| mag[k] > mag[k - 1] && mag[k] >= mag[k + 1])
        .map(|k| {
            let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            ((k as f64 + shift) * df, (b - 0.25 * (a - c) * shift) / top)
        })
        .collect();
    peaks.sort_by(|x, y| y.1.total_cmp(&x.1));
    peaks.truncate(max_peaks);
    peaks
}
