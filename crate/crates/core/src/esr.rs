//! Secular ESR spectral density of the defect coupled to a nuclear bath.
//!
//! In the secular limit every nuclear configuration shifts the electronic
//! line by `sum_j Azz_j m_j`. The density of these shifts is the inverse
//! Fourier transform of the product of per-site characteristic functions,
//! which is what [`spectral_density_fft`] evaluates. The direct enumeration in
//! [`spectral_density_bruteforce`] is kept as an oracle for small baths.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::hamiltonian::{DefectModel, FieldConfig};
use crate::isotope::{IsotopeRegistry, IsotopeSpecies};

/// Marker for hyperfine values that come from an external DFT table.
pub const EXTERNAL_DFT: &str = "EXTERNAL-DFT";

/// Enumeration limit for the brute-force oracle.
pub const MAX_CONFIGURATIONS: u128 = 1_000_000;

/// Required headroom of `f_max` over the bath support.
pub const SUPPORT_MARGIN: f64 = 1.2;

const WEIGHT_TOL: f64 = 1e-9;
const MAX_LATTICE_DIVISOR: u64 = 2000;
const MAX_FFT_LEN: usize = 1 << 22;
const LATTICE_TOL: f64 = 1e-6;
const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BathComponent {
    pub species: IsotopeSpecies,
    pub weight: f64,
    /// Secular hyperfine coupling in MHz.
    pub azz: f64,
    /// Probability of `m = +1/2` for a spin-1/2 isotope; unpolarized when `None`.
    pub polarization: Option<f64>,
}

impl BathComponent {
    pub fn new(species: &IsotopeSpecies, weight: f64, azz: f64) -> Self {
        BathComponent {
            species: species.clone(),
            weight,
            azz,
            polarization: None,
        }
    }

    /// `(2m, probability within the component)` for every nuclear state.
    fn state_weights(&self) -> Vec<(i32, f64)> {
        let mult = self.species.spin.multiplicity() as f64;
        self.species
            .spin
            .two_m_values()
            .map(|two_m| match self.polarization {
                Some(p) if two_m > 0 => (two_m, p),
                Some(p) => (two_m, 1.0 - p),
                None => (two_m, 1.0 / mult),
            })
            .collect()
    }
}

/// One lattice site, occupied by an isotope mixture.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BathSite {
    pub label: String,
    pub composition: Vec<BathComponent>,
}

impl BathSite {
    pub fn new(label: impl Into<String>, composition: Vec<BathComponent>) -> Result<Self> {
        let site = BathSite {
            label: label.into(),
            composition,
        };
        site.validate()?;
        Ok(site)
    }

    /// A site fully occupied by one isotope.
    pub fn pure(species: &IsotopeSpecies, azz: f64) -> Self {
        BathSite {
            label: species.name.clone(),
            composition: vec![BathComponent::new(species, 1.0, azz)],
        }
    }

    /// Natural-abundance mixture of every registry isotope of `element`,
    /// with `Azz = coupling_per_gamma * gamma_n`.
    pub fn natural(
        registry: &IsotopeRegistry,
        element: &str,
        coupling_per_gamma: f64,
    ) -> Result<Self> {
        let mut composition = Vec::new();
        for iso in registry.isotopes().iter().filter(|i| i.element == element) {
            if iso.natural_abundance == 0.0 {
                continue;
            }
            composition.push(BathComponent::new(iso, iso.natural_abundance, coupling_per_gamma * iso.gamma()?));
        }
        if composition.is_empty() {
            return Err(Error::invalid(format!("no isotopes of element `{element}` in registry")));
        }
        BathSite::new(format!("natural {element}"), composition)
    }

    /// A single isotope with `Azz = coupling_per_gamma * gamma_n`.
    pub fn scaled(species: &IsotopeSpecies, coupling_per_gamma: f64) -> Result<Self> {
        Ok(BathSite::pure(species, coupling_per_gamma * species.gamma()?))
    }

    pub fn validate(&self) -> Result<()> {
        let record = format!("site {}", self.label);
        if self.composition.is_empty() {
            return Err(Error::validation(&record, "component", "empty composition"));
        }
        let mut sum = 0.0;
        for c in &self.composition {
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(Error::validation(&record, "weight", format!("{} outside [0, 1]", c.weight)));
            }
            if !c.azz.is_finite() {
                return Err(Error::validation(&record, "Azz_MHz", "non-finite value"));
            }
            if let Some(p) = c.polarization {
                if c.species.spin.two_i() != 1 {
                    return Err(Error::validation(&record, "polarization", "only spin-1/2 isotopes can be polarized"));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::validation(&record, "polarization", format!("{p} outside [0, 1]")));
                }
            }
            sum += c.weight;
        }
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::validation(&record, "weight", format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Largest `|Azz| I` over the composition.
    pub fn half_extent(&self) -> f64 {
        self.composition
            .iter()
            .map(|c| c.azz.abs() * c.species.spin.value())
            .fold(0.0, f64::max)
    }

    fn configuration_count(&self) -> u128 {
        self.composition
            .iter()
            .map(|c| c.species.spin.multiplicity() as u128)
            .sum()
    }
}

/// Lower bound for `f_max` in [`spectral_density_fft`].
pub fn support_bound(sites: &[BathSite]) -> f64 {
    SUPPORT_MARGIN * sites.iter().map(BathSite::half_extent).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralDensity {
    pub bin_width: f64,
    /// Bin centers in MHz relative to the bare electronic transition.
    pub freq_offsets: Vec<f64>,
    /// Probability density per MHz.
    pub density: Vec<f64>,
    /// Upper bound on how far any line may have moved to reach the FFT grid.
    /// Zero when all couplings are commensurate with the grid.
    pub quantization_error: f64,
}

impl SpectralDensity {
    /// Probability mass per bin.
    pub fn weights(&self) -> Vec<f64> {
        self.density.iter().map(|d| d * self.bin_width).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }

    /// `(offset, weight)` pairs of bins whose weight exceeds `threshold`.
    pub fn populated(&self, threshold: f64) -> Vec<(f64, f64)> {
        self.freq_offsets
            .iter()
            .zip(self.weights())
            .filter(|(_, w)| *w > threshold)
            .map(|(f, w)| (*f, w))
            .collect()
    }

    /// Distance between the outermost bins with weight above `threshold`.
    pub fn support_width(&self, threshold: f64) -> f64 {
        let pop = self.populated(threshold);
        match (pop.first(), pop.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }

    /// Standard deviation of the shift distribution.
    pub fn rms_width(&self) -> f64 {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        let mean: f64 = self.freq_offsets.iter().zip(&w).map(|(f, w)| f * w).sum::<f64>() / total;
        let var: f64 = self
            .freq_offsets
            .iter()
            .zip(&w)
            .map(|(f, w)| (f - mean).powi(2) * w)
            .sum::<f64>()
            / total;
        var.sqrt()
    }

    pub fn weight_at(&self, offset: f64) -> f64 {
        let k = bin_index(offset, self.bin_width);
        self.freq_offsets
            .iter()
            .position(|f| bin_index(*f, self.bin_width) == k)
            .map_or(0.0, |i| self.density[i] * self.bin_width)
    }

    /// Writes `offset_MHz,weight`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        format::write_columns(path, ["offset_MHz", "weight"], &self.freq_offsets, &self.weights())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (offsets, weights, _) = format::read_columns(path, &[("offset_MHz", 1.0)], "weight")?;
        if offsets.len() < 2 {
            return Err(Error::validation(path.display().to_string(), "offset_MHz", "need at least two bins"));
        }
        let bin_width = offsets[1] - offsets[0];
        Ok(SpectralDensity {
            bin_width,
            density: weights.iter().map(|w| w / bin_width).collect(),
            freq_offsets: offsets,
            quantization_error: 0.0,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SpectrumSeries {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl SpectrumSeries {
    pub fn new(freqs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if freqs.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: freqs.len(),
                actual: values.len(),
            });
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spectrum frequencies must be strictly ascending"));
        }
        Ok(SpectrumSeries {
            freqs,
            values,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    /// Frequency of the largest value.
    pub fn argmax(&self) -> Option<f64> {
        self.values
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some((_, b)) if *v <= b => best,
                _ => Some((i, *v)),
            })
            .map(|(i, _)| self.freqs[i])
    }

    /// Writes `freq_MHz,<value_header>`.
    pub fn write_csv(&self, path: &Path, value_header: &str) -> Result<()> {
        format::write_columns(path, ["freq_MHz", value_header], &self.freqs, &self.values)
    }

    pub fn read_csv(path: &Path, value_header: &str) -> Result<Self> {
        Self::parse_csv(&format::read_text(path)?, &path.display().to_string(), value_header)
    }

    pub fn parse_csv(text: &str, origin: &str, value_header: &str) -> Result<Self> {
        let (freqs, values, _) = format::parse_columns(text, origin, &[("freq_MHz", 1.0)], value_header)?;
        SpectrumSeries::new(freqs, values)
    }
}

/// Bin `k` covers `[k - 1/2, k + 1/2) * bin_width`.
fn bin_index(f: f64, bin_width: f64) -> i64 {
    (f / bin_width + 0.5 + 1e-9).floor() as i64
}

fn check_sites(sites: &[BathSite]) -> Result<()> {
    for s in sites {
        s.validate()?;
    }
    Ok(())
}

fn check_bin_width(bin_width: f64) -> Result<()> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
    }
    Ok(())
}

/// Number of configurations enumerated by the brute-force oracle.
pub fn configuration_count(sites: &[BathSite]) -> u128 {
    sites
        .iter()
        .map(BathSite::configuration_count)
        .fold(1u128, |acc, n| acc.saturating_mul(n))
}

/// Exact enumeration of all nuclear configurations, binned like the FFT path.
pub fn spectral_density_bruteforce(sites: &[BathSite], bin_width: f64) -> Result<SpectralDensity> {
    check_bin_width(bin_width)?;
    check_sites(sites)?;
    let count = configuration_count(sites);
    if count > MAX_CONFIGURATIONS {
        return Err(Error::TooManyConfigurations {
            count,
            limit: MAX_CONFIGURATIONS,
        });
    }

    // Per-site list of (shift, probability); the full product is enumerated.
    let per_site: Vec<Vec<(f64, f64)>> = sites
        .iter()
        .map(|s| {
            s.composition
                .iter()
                .flat_map(|c| {
                    c.state_weights()
                        .into_iter()
                        .map(move |(two_m, p)| (c.azz * f64::from(two_m) / 2.0, c.weight * p))
                })
                .collect()
        })
        .collect();

    let mut bins: BTreeMap<i64, f64> = BTreeMap::new();
    let mut idx = vec![0usize; per_site.len()];
    loop {
        let mut shift = 0.0;
        let mut prob = 1.0;
        for (j, &k) in idx.iter().enumerate() {
            shift += per_site[j][k].0;
            prob *= per_site[j][k].1;
        }
        *bins.entry(bin_index(shift, bin_width)).or_default() += prob;

        let mut j = 0;
        loop {
            if j == idx.len() {
                return Ok(dense_from_bins(&bins, bin_width, support_bound(sites), 0.0));
            }
            idx[j] += 1;
            if idx[j] < per_site[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Lays sparse bins onto a symmetric grid reaching at least `f_max`.
fn dense_from_bins(bins: &BTreeMap<i64, f64>, bin_width: f64, f_max: f64, q_err: f64) -> SpectralDensity {
    let reach = (f_max / bin_width).ceil() as i64;
    let lo = bins.keys().next().copied().unwrap_or(0).min(-reach);
    let hi = bins.keys().last().copied().unwrap_or(0).max(reach);
    let mut freq_offsets = Vec::with_capacity((hi - lo + 1) as usize);
    let mut density = Vec::with_capacity((hi - lo + 1) as usize);
    for k in lo..=hi {
        freq_offsets.push(k as f64 * bin_width);
        density.push(bins.get(&k).copied().unwrap_or(0.0) / bin_width);
    }
    SpectralDensity {
        bin_width,
        freq_offsets,
        density,
        quantization_error: q_err,
    }
}

/// Grid resolution chosen for the FFT: `bin_width / divisor`.
struct Lattice {
    divisor: u64,
    len: usize,
    /// Per site, per component: (integer shift, probability) per nuclear state.
    factors: Vec<Vec<Vec<(i64, f64)>>>,
    error: f64,
}

fn fft_len(f_max: f64, step: f64) -> usize {
    let needed = (2.0 * f_max / step).ceil() as usize + 2;
    needed.next_power_of_two().max(2)
}

/// Smallest unit a shift can take on one component: `Azz/2` for half-integer
/// spins, `Azz` otherwise.
fn unit_shift(c: &BathComponent) -> f64 {
    if c.species.spin.two_i() % 2 == 1 {
        c.azz / 2.0
    } else {
        c.azz
    }
}

fn choose_lattice(sites: &[BathSite], bin_width: f64, f_max: f64) -> Lattice {
    let units: Vec<f64> = sites
        .iter()
        .flat_map(|s| s.composition.iter().map(unit_shift))
        .collect();
    let commensurate = |k: u64| {
        units.iter().all(|u| {
            let x = u * k as f64 / bin_width;
            (x - x.round()).abs() <= LATTICE_TOL
        })
    };
    let fits = |k: u64| fft_len(f_max, bin_width / k as f64) <= MAX_FFT_LEN;

    let exact = (1..=MAX_LATTICE_DIVISOR).find(|&k| fits(k) && commensurate(k));
    let divisor = exact.unwrap_or_else(|| {
        (1..=MAX_LATTICE_DIVISOR)
            .rev()
            .find(|&k| fits(k))
            .unwrap_or(1)
    });
    let step = bin_width / divisor as f64;
    let len = fft_len(f_max, step);

    let mut error = 0.0;
    let factors = sites
        .iter()
        .map(|s| {
            let mut site_err: f64 = 0.0;
            let comps = s
                .composition
                .iter()
                .map(|c| {
                    c.state_weights()
                        .into_iter()
                        .map(|(two_m, p)| {
                            let exact = c.azz * f64::from(two_m) / 2.0 / step;
                            let k = exact.round();
                            site_err = site_err.max((exact - k).abs() * step);
                            (k as i64, c.weight * p)
                        })
                        .collect()
                })
                .collect();
            error += site_err;
            comps
        })
        .collect();
    Lattice {
        divisor,
        len,
        factors,
        error: if exact.is_some() { 0.0 } else { error },
    }
}

/// Characteristic-function evaluation of the bath spectral density.
///
/// `f_max` must cover [`support_bound`]. Bins follow the same convention as
/// [`spectral_density_bruteforce`]. When every coupling is commensurate with a
/// sub-grid of `bin_width` the result is exact up to rounding; otherwise each
/// line is moved to the nearest sub-grid point and the bound on the total move
/// is reported in [`SpectralDensity::quantization_error`].
pub fn spectral_density_fft(sites: &[BathSite], bin_width: f64, f_max: f64) -> Result<SpectralDensity> {
    check_bin_width(bin_width)?;
    check_sites(sites)?;
    let required = support_bound(sites);
    if !(f_max >= required) {
        return Err(Error::SupportTooSmall { f_max, required });
    }
    let f_max = f_max.max(bin_width);
    let lat = choose_lattice(sites, bin_width, f_max);
    let n = lat.len;
    let nn = n as i64;

    let roots: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
        .collect();
    // per site, the distinct lattice shifts with their summed probability
    let sites_k: Vec<Vec<(i64, f64)>> = lat
        .factors
        .iter()
        .map(|site| {
            let mut merged: BTreeMap<i64, f64> = BTreeMap::new();
            for (k, p) in site.iter().flatten() {
                *merged.entry(k.rem_euclid(nn)).or_default() += *p;
            }
            merged.into_iter().collect()
        })
        .collect();

    // Every phase is an exact entry of the root table; the index of each state
    // advances by its shift per sample, modulo n.
    let mut cf = vec![Complex64::new(0.0, 0.0); n];
    cf.par_chunks_mut(CHUNK).enumerate().for_each(|(chunk, out)| {
        let start = (chunk * CHUNK) as i64;
        out.iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        let mut sum = vec![Complex64::new(0.0, 0.0); out.len()];
        for site in &sites_k {
            sum.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for &(k, p) in site {
                let k = k as usize;
                let mut idx = ((k as i64 * start) % nn) as usize;
                for v in sum.iter_mut() {
                    *v += roots[idx] * p;
                    idx += k;
                    if idx >= n {
                        idx -= n;
                    }
                }
            }
            out.iter_mut().zip(&sum).for_each(|(o, s)| *o *= *s);
        }
    });

    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut cf);

    let k_div = lat.divisor as i64;
    let mut bins: BTreeMap<i64, f64> = BTreeMap::new();
    for (idx, v) in cf.iter().enumerate() {
        let fine = if idx >= n / 2 { idx as i64 - nn } else { idx as i64 };
        let w = v.norm() / n as f64;
        if w == 0.0 {
            continue;
        }
        let coarse = (2 * fine + k_div).div_euclid(2 * k_div);
        *bins.entry(coarse).or_default() += w;
    }
    // drop bins that fall outside the requested window; they only carry rounding noise
    let reach = (f_max / bin_width).ceil() as i64;
    bins.retain(|k, _| k.abs() <= reach);
    Ok(dense_from_bins(&bins, bin_width, f_max, lat.error))
}

/// Wrapped Lorentzian on a periodic grid of `n` bins, normalized to unit sum.
fn wrapped_lorentzian(n: usize, bin_width: f64, fwhm: f64) -> Vec<f64> {
    let period = n as f64 * bin_width;
    let a = 2.0 * PI * (fwhm / 2.0) / period;
    let (sh, ch) = (a.sinh(), a.cosh());
    let mut k: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 * bin_width;
            sh / (ch - (2.0 * PI * x / period).cos())
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Absorption spectrum: `1 - contrast * (weights (*) L)` on absolute frequencies.
///
/// With `extra_fwhm > 0` the grid is padded by five widths on each side and the
/// Lorentzian is applied as a circular convolution with unit-sum kernel, so the
/// absorbed area is preserved.
pub fn synthesize_esr(
    density: &SpectralDensity,
    center: f64,
    contrast: f64,
    extra_fwhm: f64,
) -> Result<SpectrumSeries> {
    if !(contrast > 0.0 && contrast <= 1.0) {
        return Err(Error::invalid(format!("contrast must lie in (0, 1], got {contrast}")));
    }
    if !(extra_fwhm >= 0.0) || !extra_fwhm.is_finite() {
        return Err(Error::invalid(format!("extra_fwhm must be non-negative, got {extra_fwhm}")));
    }
    let b = density.bin_width;
    let weights = density.weights();
    let first = density.freq_offsets.first().copied().unwrap_or(0.0);

    let (offsets, absorbed) = if extra_fwhm == 0.0 {
        (density.freq_offsets.clone(), weights)
    } else {
        let pad = ((5.0 * extra_fwhm / b).ceil() as usize).min(1 << 16);
        let n = weights.len() + 2 * pad;
        let mut padded = vec![0.0; n];
        padded[pad..pad + weights.len()].copy_from_slice(&weights);
        let kernel = wrapped_lorentzian(n, b, extra_fwhm);
        let populated: Vec<(usize, f64)> = padded
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i, *w))
            .collect();
        let out: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                populated
                    .iter()
                    .map(|&(j, w)| w * kernel[(i + n - j) % n])
                    .sum()
            })
            .collect();
        let offsets = (0..n).map(|i| first + (i as f64 - pad as f64) * b).collect();
        (offsets, out)
    };

    let freqs = offsets.iter().map(|f| center + f).collect();
    let values = absorbed.iter().map(|a| 1.0 - contrast * a).collect();
    Ok(SpectrumSeries::new(freqs, values)?
        .with_meta("center_MHz", format::fmt_num(center))
        .with_meta("contrast", format::fmt_num(contrast))
        .with_meta("extra_fwhm_MHz", format::fmt_num(extra_fwhm)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionCenters {
    pub f_minus: f64,
    pub f_plus: f64,
    pub warning: Option<String>,
}

/// Secular electronic transition frequencies `D +- gamma_e Bz`.
pub fn transition_centers(model: &DefectModel, field: &FieldConfig) -> TransitionCenters {
    let shift = model.gamma_e * field.bz;
    let transverse = field.bx.hypot(field.by);
    let warning = (transverse > 0.05 * field.bz.abs()).then(|| {
        format!(
            "transverse field {transverse} G exceeds 5% of Bz; secular centers are approximate"
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    TransitionCenters {
        f_minus: model.d_gs - shift,
        f_plus: model.d_gs + shift,
        warning,
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CouplingField {
    Value(f64),
    Marker(String),
}

#[allow(non_snake_case)]
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentRecord {
    isotope: String,
    weight: f64,
    Azz_MHz: CouplingField,
    #[serde(default)]
    polarization: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteRecord {
    label: Option<String>,
    component: Vec<ComponentRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BathFile {
    #[allow(dead_code)]
    format_version: u32,
    #[serde(default)]
    site: Vec<SiteRecord>,
}

/// Parses a bath description. Placeholder couplings are validation errors.
pub fn parse_bath(text: &str, origin: &str, registry: &IsotopeRegistry) -> Result<Vec<BathSite>> {
    let file: BathFile = format::parse_toml(text, origin)?;
    let mut sites = Vec::with_capacity(file.site.len());
    for (i, rec) in file.site.into_iter().enumerate() {
        let label = rec.label.unwrap_or_else(|| format!("#{i}"));
        let record = format!("{origin}: site {label}");
        let mut composition = Vec::with_capacity(rec.component.len());
        for c in rec.component {
            let species = registry
                .get(&c.isotope)
                .map_err(|e| Error::validation(&record, "isotope", e.to_string()))?;
            let azz = match c.Azz_MHz {
                CouplingField::Value(v) => v,
                CouplingField::Marker(m) if m == EXTERNAL_DFT => {
                    return Err(Error::validation(
                        &record,
                        "Azz_MHz",
                        format!("{EXTERNAL_DFT} placeholder: supply the coupling from an external DFT table"),
                    ))
                }
                CouplingField::Marker(m) => {
                    return Err(Error::validation(&record, "Azz_MHz", format!("expected a number, found \"{m}\"")))
                }
            };
            composition.push(BathComponent {
                polarization: c.polarization,
                ..BathComponent::new(species, c.weight, azz)
            });
        }
        let site = BathSite {
            label,
            composition,
        };
        site.validate().map_err(|e| match e {
            Error::Validation { field, message, .. } => Error::Validation {
                record: record.clone(),
                field,
                message,
            },
            other => other,
        })?;
        sites.push(site);
    }
    Ok(sites)
}

pub fn load_bath(path: &Path, registry: &IsotopeRegistry) -> Result<Vec<BathSite>> {
    let text = format::read_text(path)?;
    parse_bath(&text, &path.display().to_string(), registry)
}
