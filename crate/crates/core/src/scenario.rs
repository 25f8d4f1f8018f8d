//! Scenario files: one TOML document binding inputs and parameters to a
//! simulation or fit, executed into an output directory.
//!
//! ```toml
//! format_version = 1
//! kind = "endor-spectrum"
//! model = "bundle:model_3x15n.toml"   # or a path relative to this file
//!
//! [field]
//! bz = 760.0
//!
//! [params]
//! fwhm = 2.0
//! ```
//!
//! Common keys: `kind`, `description`, `registry`, `model`, `bath`, `data`,
//! the `[isotope_gamma]` table of gyromagnetic-ratio overrides (MHz/G),
//! `[field]` (`bz`, `bx`, `by` in G), `[drive]` (`b_dr` G, `freq` MHz,
//! `theta`, `phase` rad) and the kind-specific `[params]` table documented on
//! each `*Params` struct. Every referenced file is loaded and validated
//! before computation starts.
//!
//! Paths beginning with `bundle:` name files of the data bundle shipped with
//! the crate; setting [`DATA_DIR_ENV`] reads them from that directory instead.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    self, diagonalize, simulate_nuclear_rabi, spectrum_peaks, transition_lines, transition_spectrum, uniform_times,
    AmplitudeRule, DriveOperators, ManifoldSelector, TransitionOptions,
};
use crate::effective::{
    beat_frequencies, calibration_report, omega_j, rabi_frequencies, DriveSpec, OmegaOptions, Operating,
};
use crate::error::{Error, Result};
use crate::esr::{
    self, configuration_count, spectral_density_bruteforce, spectral_density_fft, support_bound, synthesize_esr,
    transition_centers, BathSite, SpectrumSeries,
};
use crate::fit::{
    compare_stretch, fit_decay, fit_multiplet, fit_polarization, max_slope, multiplet_curve, sensitivity_ac,
    sensitivity_dc, AmplitudeLaw, DcMode, DecayModel, FitOptions, LineOrder, MultipletModel, PolarizationModel,
    SensitivityInput,
};
use crate::format::{self, fmt_num, FORMAT_VERSION};
use crate::hamiltonian::{ladder_coefficients, DefectModel, FieldConfig};
use crate::isotope::IsotopeRegistry;

/// Environment variable overriding the location of `bundle:` files.
pub const DATA_DIR_ENV: &str = "ISOSPIN_DATA_DIR";

/// Name of the marker written next to partial outputs of a failed run.
pub const FAILURE_MARKER: &str = "FAILED";

pub const MANIFEST: &str = "manifest.json";

const BUNDLE_PREFIX: &str = "bundle:";

/// Files embedded in the binary, addressable as `bundle:<name>`.
const BUNDLE: &[(&str, &str)] = &[
    ("isotopes.toml", include_str!("../data/isotopes.toml")),
    ("model_3x15n.toml", include_str!("../data/model_3x15n.toml")),
    ("model_3x15n_abinitio.toml", include_str!("../data/model_3x15n_abinitio.toml")),
    ("bath_h10b15n.toml", include_str!("../data/bath_h10b15n.toml")),
    ("bath_3x15n.toml", include_str!("../data/bath_3x15n.toml")),
    ("bath_36site_skeleton.toml", include_str!("../data/bath_36site_skeleton.toml")),
    ("spectra/esr_unpolarized.csv", include_str!("../data/spectra/esr_unpolarized.csv")),
    ("spectra/esr_polarized.csv", include_str!("../data/spectra/esr_polarized.csv")),
    ("spectra/coherence_decay.csv", include_str!("../data/spectra/coherence_decay.csv")),
    ("scenarios/esr_h10b15n.scn", include_str!("../data/scenarios/esr_h10b15n.scn")),
    ("scenarios/esr_polarized_15n.scn", include_str!("../data/scenarios/esr_polarized_15n.scn")),
    ("scenarios/endor_3x15n.scn", include_str!("../data/scenarios/endor_3x15n.scn")),
    ("scenarios/rabi_3x15n.scn", include_str!("../data/scenarios/rabi_3x15n.scn")),
    ("scenarios/fit_multiplet.scn", include_str!("../data/scenarios/fit_multiplet.scn")),
    ("scenarios/fit_polarization.scn", include_str!("../data/scenarios/fit_polarization.scn")),
    ("scenarios/fit_decay.scn", include_str!("../data/scenarios/fit_decay.scn")),
    ("scenarios/sensitivity_dc.scn", include_str!("../data/scenarios/sensitivity_dc.scn")),
    ("scenarios/sensitivity_ac_paper.scn", include_str!("../data/scenarios/sensitivity_ac_paper.scn")),
    ("scenarios/calibration.scn", include_str!("../data/scenarios/calibration.scn")),
];

/// Names of the bundled scenarios, as accepted by [`Source::parse`].
pub fn bundled_scenarios() -> Vec<String> {
    BUNDLE
        .iter()
        .filter(|(name, _)| name.ends_with(".scn"))
        .map(|(name, _)| format!("{BUNDLE_PREFIX}{name}"))
        .collect()
}

/// Where an input file comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Bundle(String),
    File(PathBuf),
}

impl Source {
    /// `bundle:<name>` or a path, resolved against `base` when relative.
    pub fn parse(spec: &str, base: Option<&Path>) -> Source {
        if let Some(name) = spec.strip_prefix(BUNDLE_PREFIX) {
            return Source::Bundle(name.to_string());
        }
        let p = PathBuf::from(spec);
        match base {
            Some(b) if p.is_relative() => Source::File(b.join(p)),
            _ => Source::File(p),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Source::Bundle(name) => format!("{BUNDLE_PREFIX}{name}"),
            Source::File(p) => p.display().to_string(),
        }
    }

    pub fn read(&self) -> Result<String> {
        match self {
            Source::File(p) => format::read_text(p),
            Source::Bundle(name) => {
                if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
                    return format::read_text(&Path::new(&dir).join(name));
                }
                BUNDLE
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, text)| text.to_string())
                    .ok_or_else(|| Error::validation(self.describe(), "path", "no such bundled file"))
            }
        }
    }

    /// Resolves a reference made from inside this file; relative references
    /// from a bundled file stay inside the bundle.
    fn join(&self, spec: &str) -> Source {
        if spec.starts_with(BUNDLE_PREFIX) {
            return Source::parse(spec, None);
        }
        match self {
            Source::Bundle(name) if Path::new(spec).is_relative() => {
                let dir = Path::new(name).parent().map(Path::to_path_buf).unwrap_or_default();
                Source::Bundle(normalize(&dir.join(spec)))
            }
            Source::Bundle(_) => Source::File(PathBuf::from(spec)),
            Source::File(p) => Source::parse(spec, p.parent()),
        }
    }
}

fn normalize(p: &Path) -> String {
    let mut parts: Vec<String> = Vec::new();
    for c in p.components() {
        match c {
            std::path::Component::ParentDir => {
                parts.pop();
            }
            std::path::Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
            _ => {}
        }
    }
    parts.join("/")
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    EsrSpectrum,
    EndorSpectrum,
    Rabi,
    FitMultiplet,
    FitPolarization,
    FitDecay,
    SensitivityDc,
    SensitivityAc,
    Validate,
    Calibration,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveInput {
    pub b_dr: f64,
    /// Resonant with the dominant nuclear line when omitted.
    pub freq: Option<f64>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[allow(dead_code)]
    format_version: u32,
    kind: Kind,
    #[serde(default)]
    description: Option<String>,
    registry: Option<String>,
    #[serde(default)]
    isotope_gamma: BTreeMap<String, f64>,
    model: Option<String>,
    bath: Option<String>,
    data: Option<String>,
    field: Option<FieldConfig>,
    drive: Option<DriveInput>,
    #[serde(default)]
    params: Option<toml::Value>,
}

fn default_band() -> (f64, f64) {
    dynamics::NUCLEAR_BAND
}

/// `esr-spectrum`: bath spectral density and the absorption spectrum it implies.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsrParams {
    #[serde(default = "EsrParams::default_bin")]
    pub bin_width: f64,
    /// Defaults to the support bound of the bath.
    pub f_max: Option<f64>,
    /// `fft` or `bruteforce`.
    #[serde(default = "EsrParams::default_method")]
    pub method: String,
    /// `minus` (`D - gamma_e Bz`) or `plus`.
    #[serde(default = "EsrParams::default_transition")]
    pub transition: String,
    #[serde(default = "EsrParams::default_contrast")]
    pub contrast: f64,
    #[serde(default)]
    pub extra_fwhm: f64,
    /// Probability of `m = +1/2` applied to every spin-1/2 component.
    pub polarization: Option<f64>,
    /// Line count of an optional multiplet fit of the synthesized spectrum.
    pub fit_lines: Option<usize>,
    /// Populated bins listed in the report when there are at most this many.
    #[serde(default = "EsrParams::default_list")]
    pub list_bins: usize,
}

impl EsrParams {
    fn default_bin() -> f64 {
        0.5
    }
    fn default_method() -> String {
        "fft".into()
    }
    fn default_transition() -> String {
        "minus".into()
    }
    fn default_contrast() -> f64 {
        0.03
    }
    fn default_list() -> usize {
        64
    }
}

/// `endor-spectrum`: nuclear transitions from the selected manifold.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndorParams {
    #[serde(default = "default_band")]
    pub band: (f64, f64),
    #[serde(default = "EndorParams::default_fwhm")]
    pub fwhm: f64,
    #[serde(default = "EndorParams::default_grid")]
    pub grid_step: f64,
    #[serde(default)]
    pub rule: AmplitudeRule,
    /// `electron` (Sx, Sy) or `zeeman` (full Zeeman coupling).
    #[serde(default = "EndorParams::default_probe")]
    pub probe: String,
    #[serde(default = "EndorParams::default_selector")]
    pub selector: ManifoldSelector,
}

impl EndorParams {
    fn default_fwhm() -> f64 {
        dynamics::DEFAULT_FWHM
    }
    fn default_grid() -> f64 {
        0.005
    }
    fn default_probe() -> String {
        "electron".into()
    }
    fn default_selector() -> ManifoldSelector {
        ManifoldSelector::NUCLEAR_DEFAULT
    }
}

impl Default for EndorParams {
    fn default() -> Self {
        parse_params(None, "params").expect("all endor parameters have defaults")
    }
}

/// `rabi`: driven nuclear Rabi oscillation and its frequency content.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiParams {
    pub duration_us: f64,
    pub sample_us: f64,
    /// Defaults to the step guard.
    pub dt_us: Option<f64>,
    #[serde(default = "RabiParams::default_peaks")]
    pub max_peaks: usize,
}

impl RabiParams {
    fn default_peaks() -> usize {
        8
    }
}

/// Initial multiplet geometry; unset entries come from the spectrum.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipletGuess {
    pub center: Option<f64>,
    pub splitting: Option<f64>,
    pub fwhm: Option<f64>,
}

/// `fit-multiplet`: Lorentzian multiplet fit of `data` (`freq_MHz,intensity`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMultipletParams {
    pub n_lines: usize,
    #[serde(default = "FitMultipletParams::default_law")]
    pub law: AmplitudeLaw,
    #[serde(default)]
    pub guess: MultipletGuess,
}

impl FitMultipletParams {
    fn default_law() -> AmplitudeLaw {
        AmplitudeLaw::Unpolarized
    }
}

/// `fit-polarization`: binomial polarization of a four-line spectrum.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitPolarizationParams {
    #[serde(default = "FitPolarizationParams::default_model")]
    pub model: PolarizationModel,
    /// Isotope whose gyromagnetic-ratio sign fixes the line order.
    pub isotope: String,
    #[serde(default)]
    pub guess: MultipletGuess,
}

impl FitPolarizationParams {
    fn default_model() -> PolarizationModel {
        PolarizationModel::Single
    }
}

/// `fit-decay`: stretched-exponential fit of `data` (`time_us,population`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDecayParams {
    pub t_decay: f64,
    #[serde(default = "FitDecayParams::one")]
    pub amplitude: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "FitDecayParams::one")]
    pub stretch_n: f64,
    #[serde(default)]
    pub free_n: bool,
    /// Also fit with `n` frozen at 1 and free, and compare.
    #[serde(default)]
    pub compare: bool,
}

impl FitDecayParams {
    fn one() -> f64 {
        1.0
    }
}

/// `sensitivity-dc`: slope from `max_slope_per_Hz`, from a multiplet fit of
/// `data`, or from the Lorentzian shortcut.
#[allow(non_snake_case)]
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityDcParams {
    pub R: f64,
    #[serde(default = "SensitivityDcParams::default_mode")]
    pub mode: DcMode,
    pub max_slope_per_Hz: Option<f64>,
    pub C_m: Option<f64>,
    pub delta_nu_MHz: Option<f64>,
    /// Used with `data`.
    pub n_lines: Option<usize>,
}

impl SensitivityDcParams {
    fn default_mode() -> DcMode {
        DcMode::Slope
    }
}

/// `calibration`: effective gyromagnetic ratio from measured Rabi frequencies.
#[allow(non_snake_case)]
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationParams {
    pub omega_n_MHz: f64,
    pub omega_e_MHz: f64,
    pub r_volt: f64,
    /// Isotope for the enhancement factor.
    pub isotope: Option<String>,
}

/// Parameters of one run after validation.
#[derive(Clone, Debug)]
enum Plan {
    Esr(EsrParams),
    Endor(EndorParams),
    Rabi(RabiParams),
    FitMultiplet(FitMultipletParams),
    FitPolarization(FitPolarizationParams),
    FitDecay(FitDecayParams),
    SensitivityDc(SensitivityDcParams),
    SensitivityAc(SensitivityInput),
    Validate,
    Calibration(CalibrationParams),
}

fn parse_params<T: DeserializeOwned>(value: Option<&toml::Value>, origin: &str) -> Result<T> {
    let v = value
        .cloned()
        .unwrap_or_else(|| toml::Value::Table(toml::map::Map::new()));
    v.try_into().map_err(|e: toml::de::Error| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub source: String,
    pub sha256: String,
}

/// A scenario with every input loaded and validated.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub kind: Kind,
    pub description: Option<String>,
    pub source: Source,
    pub registry: IsotopeRegistry,
    pub model: Option<DefectModel>,
    pub bath: Option<Vec<BathSite>>,
    pub spectrum: Option<SpectrumSeries>,
    pub trace: Option<(Vec<f64>, Vec<f64>)>,
    pub field: Option<FieldConfig>,
    pub drive: Option<DriveInput>,
    pub inputs: Vec<InputRecord>,
    plan: Plan,
}

fn load_text(src: &Source, role: &str, inputs: &mut Vec<InputRecord>) -> Result<String> {
    let text = src.read()?;
    inputs.push(InputRecord {
        role: role.into(),
        source: src.describe(),
        sha256: digest(&text),
    });
    Ok(text)
}

fn require<T: Clone>(v: &Option<T>, record: &str, field: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::validation(record, field, "required for this scenario kind"))
}

/// Parses a scenario document; `overrides` replaces scalar values by dotted path.
pub fn prepare(source: &Source, overrides: &[(String, f64)]) -> Result<Prepared> {
    let mut inputs = Vec::new();
    let text = load_text(source, "scenario", &mut inputs)?;
    let origin = source.describe();
    let mut doc: toml::Value = toml::from_str(&text).map_err(|e| Error::Parse {
        path: origin.clone(),
        message: e.to_string(),
    })?;
    format::check_format_version(&doc, &origin)?;
    for (path, value) in overrides {
        set_scalar(&mut doc, path, *value, &origin)?;
    }
    let file: ScenarioFile = doc.try_into().map_err(|e: toml::de::Error| Error::Parse {
        path: origin.clone(),
        message: e.to_string(),
    })?;

    let mut registry = match &file.registry {
        Some(r) => {
            let src = source.join(r);
            let t = load_text(&src, "registry", &mut inputs)?;
            IsotopeRegistry::parse(&t, &src.describe())?
        }
        None => IsotopeRegistry::bundled(),
    };
    for (name, gamma) in &file.isotope_gamma {
        if !gamma.is_finite() {
            return Err(Error::validation(&origin, format!("isotope_gamma.{name}"), "non-finite value"));
        }
        registry = registry
            .with_gamma(name, *gamma)
            .map_err(|e| Error::validation(&origin, format!("isotope_gamma.{name}"), e.to_string()))?;
    }

    let model = match &file.model {
        Some(m) => {
            let src = source.join(m);
            let t = load_text(&src, "model", &mut inputs)?;
            Some(DefectModel::parse(&t, &src.describe(), &registry)?)
        }
        None => None,
    };
    let bath = match &file.bath {
        Some(b) => {
            let src = source.join(b);
            let t = load_text(&src, "bath", &mut inputs)?;
            Some(esr::parse_bath(&t, &src.describe(), &registry)?)
        }
        None => None,
    };

    if let Some(f) = &file.field {
        if !f.is_finite() {
            return Err(Error::validation(&origin, "field", "non-finite component"));
        }
    }
    if let Some(d) = &file.drive {
        DriveSpec {
            b_dr: d.b_dr,
            freq: d.freq.unwrap_or(0.0),
            theta: d.theta,
            phase: d.phase,
        }
        .validate()
        .map_err(|e| Error::validation(&origin, "drive", e.to_string()))?;
    }

    let params_origin = format!("{origin} [params]");
    let p = file.params.as_ref();
    let plan = match file.kind {
        Kind::EsrSpectrum => {
            let e: EsrParams = parse_params(p, &params_origin)?;
            require(&file.bath, &origin, "bath")?;
            if !matches!(e.method.as_str(), "fft" | "bruteforce") {
                return Err(Error::validation(&params_origin, "method", "expected `fft` or `bruteforce`"));
            }
            if !matches!(e.transition.as_str(), "minus" | "plus") {
                return Err(Error::validation(&params_origin, "transition", "expected `minus` or `plus`"));
            }
            if e.fit_lines.is_some() && e.extra_fwhm <= 0.0 {
                return Err(Error::validation(&params_origin, "extra_fwhm", "a multiplet fit needs extra_fwhm > 0"));
            }
            Plan::Esr(e)
        }
        Kind::EndorSpectrum => {
            require(&file.model, &origin, "model")?;
            require(&file.field, &origin, "field")?;
            let e: EndorParams = parse_params(p, &params_origin)?;
            if !matches!(e.probe.as_str(), "electron" | "zeeman") {
                return Err(Error::validation(&params_origin, "probe", "expected `electron` or `zeeman`"));
            }
            Plan::Endor(e)
        }
        Kind::Rabi => {
            require(&file.model, &origin, "model")?;
            require(&file.field, &origin, "field")?;
            require(&file.drive, &origin, "drive")?;
            let r: RabiParams = parse_params(p, &params_origin)?;
            if !(r.duration_us > 0.0 && r.sample_us > 0.0 && r.sample_us <= r.duration_us) {
                return Err(Error::validation(
                    &params_origin,
                    "sample_us",
                    "need 0 < sample_us <= duration_us",
                ));
            }
            Plan::Rabi(r)
        }
        Kind::FitMultiplet => {
            require(&file.data, &origin, "data")?;
            Plan::FitMultiplet(parse_params(p, &params_origin)?)
        }
        Kind::FitPolarization => {
            require(&file.data, &origin, "data")?;
            let fp: FitPolarizationParams = parse_params(p, &params_origin)?;
            registry
                .get(&fp.isotope)
                .and_then(|s| s.gamma())
                .map_err(|e| Error::validation(&params_origin, "isotope", e.to_string()))?;
            Plan::FitPolarization(fp)
        }
        Kind::FitDecay => {
            require(&file.data, &origin, "data")?;
            Plan::FitDecay(parse_params(p, &params_origin)?)
        }
        Kind::SensitivityDc => Plan::SensitivityDc(parse_params(p, &params_origin)?),
        Kind::SensitivityAc => Plan::SensitivityAc(parse_params(p, &params_origin)?),
        Kind::Validate => {
            registry
                .validate_complete()
                .map_err(|e| match e {
                    Error::Validation { record, field, message } => Error::Validation {
                        record: format!("registry {record}"),
                        field,
                        message,
                    },
                    other => other,
                })?;
            if let Some(m) = &model {
                for n in &m.nuclei {
                    n.species.gamma()?;
                }
            }
            Plan::Validate
        }
        Kind::Calibration => {
            require(&file.field, &origin, "field")?;
            let c: CalibrationParams = parse_params(p, &params_origin)?;
            if let Some(iso) = &c.isotope {
                registry
                    .get(iso)
                    .and_then(|s| s.gamma())
                    .map_err(|e| Error::validation(&params_origin, "isotope", e.to_string()))?;
            }
            Plan::Calibration(c)
        }
    };

    let (mut spectrum, mut trace) = (None, None);
    if let Some(d) = &file.data {
        let src = source.join(d);
        let t = load_text(&src, "data", &mut inputs)?;
        let name = src.describe();
        match file.kind {
            Kind::FitDecay => {
                let (times, values, _) =
                    format::parse_columns(&t, &name, &[("time_us", 1.0), ("time_ns", 1e-3)], "population")?;
                trace = Some((times, values));
            }
            _ => spectrum = Some(SpectrumSeries::parse_csv(&t, &name, "intensity")?),
        }
    }

    Ok(Prepared {
        kind: file.kind,
        description: file.description,
        source: source.clone(),
        registry,
        model,
        bath,
        spectrum,
        trace,
        field: file.field,
        drive: file.drive,
        inputs,
        plan,
    })
}

/// Replaces the number at a dotted path; the key must already hold a number.
fn set_scalar(doc: &mut toml::Value, path: &str, value: f64, origin: &str) -> Result<()> {
    let bad = |msg: &str| Error::validation(origin, path, msg.to_string());
    if !value.is_finite() {
        return Err(bad("sweep value must be finite"));
    }
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| bad("path does not name a table entry"))?;
        let entry = table.get_mut(*key).ok_or_else(|| bad("no such scenario parameter"))?;
        if i + 1 == parts.len() {
            match entry {
                toml::Value::Float(_) => *entry = toml::Value::Float(value),
                toml::Value::Integer(_) if value.fract() == 0.0 && value.abs() < 9.0e15 => {
                    *entry = toml::Value::Integer(value as i64)
                }
                toml::Value::Integer(_) => *entry = toml::Value::Float(value),
                _ => return Err(bad("not a scalar numeric parameter")),
            }
            return Ok(());
        }
        cur = entry;
    }
    Err(bad("empty parameter path"))
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub kind: Option<Kind>,
    pub status: String,
    pub exit_code: i32,
    pub inputs: Vec<InputRecord>,
    pub overrides: BTreeMap<String, f64>,
    pub outputs: Vec<OutputRecord>,
    pub error: Option<String>,
}

/// Exit status convention of the command-line runner.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        2
    } else {
        3
    }
}

/// Output directory bookkeeping for one run.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        format::write_json(&p, value)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub exit_code: i32,
    pub outputs: Vec<String>,
    pub error: Option<String>,
}

/// Loads, validates and executes a scenario into `out`. Never panics on bad
/// input; the outcome is reflected in the exit code, `manifest.json` and, on
/// failure, the [`FAILURE_MARKER`] file.
pub fn run(source: &Source, out: &Path, overrides: &[(String, f64)]) -> RunSummary {
    let mut outputs = Outputs {
        dir: out.to_path_buf(),
        files: Vec::new(),
    };
    let setup = fs::create_dir_all(out).map_err(Error::from).and_then(|_| {
        let marker = out.join(FAILURE_MARKER);
        if marker.exists() {
            fs::remove_file(marker)?;
        }
        Ok(())
    });
    let prepared = setup.and_then(|_| prepare(source, overrides));
    let (kind, inputs, result) = match prepared {
        Ok(p) => {
            let r = execute(&p, &mut outputs);
            (Some(p.kind), p.inputs, r)
        }
        Err(e) => (None, Vec::new(), Err(e)),
    };
    let (code, error) = match &result {
        Ok(()) => (0, None),
        Err(e) => (exit_code(e), Some(e.to_string())),
    };
    let mut records = Vec::new();
    for f in &outputs.files {
        if let Ok(bytes) = fs::read(out.join(f)) {
            records.push(OutputRecord {
                file: f.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        format_version: FORMAT_VERSION,
        kind,
        status: if code == 0 { "ok".into() } else { "failed".into() },
        exit_code: code,
        inputs,
        overrides: overrides.iter().cloned().collect(),
        outputs: records,
        error: error.clone(),
    };
    let mut code = code;
    let mut error = error;
    if let Err(e) = format::write_json(&out.join(MANIFEST), &manifest) {
        log::error!("cannot write manifest: {e}");
        if code == 0 {
            code = exit_code(&e);
            error = Some(e.to_string());
        }
    }
    if let Some(msg) = &error {
        log::error!("{msg}");
        if let Err(e) = fs::write(out.join(FAILURE_MARKER), format!("exit {code}: {msg}\n")) {
            log::error!("cannot write failure marker: {e}");
        }
    }
    RunSummary {
        exit_code: code,
        outputs: outputs.files,
        error,
    }
}

fn execute(p: &Prepared, out: &mut Outputs) -> Result<()> {
    match &p.plan {
        Plan::Esr(e) => run_esr(p, e, out),
        Plan::Endor(e) => run_endor(p, e, out),
        Plan::Rabi(r) => run_rabi(p, r, out),
        Plan::FitMultiplet(f) => run_fit_multiplet(p, f, out),
        Plan::FitPolarization(f) => run_fit_polarization(p, f, out),
        Plan::FitDecay(f) => run_fit_decay(p, f, out),
        Plan::SensitivityDc(s) => run_sensitivity_dc(p, s, out),
        Plan::SensitivityAc(s) => {
            let r = sensitivity_ac(s)?;
            out.json("report.json", &serde_json::json!({ "input": s, "eta_T_per_sqrtHz": r.eta, "tau_over_T2": r.tau_over_t2 }))
        }
        Plan::Validate => out.json(
            "report.json",
            &serde_json::json!({
                "valid": true,
                "isotopes": p.registry.isotopes().iter().map(|i| &i.name).collect::<Vec<_>>(),
                "nuclei": p.model.as_ref().map(|m| m.nuclei.len()),
                "bath_sites": p.bath.as_ref().map(Vec::len),
            }),
        ),
        Plan::Calibration(c) => run_calibration(p, c, out),
    }
}

fn default_model(p: &Prepared) -> Result<DefectModel> {
    match &p.model {
        Some(m) => Ok(m.clone()),
        None => DefectModel::bundled_default(&p.registry),
    }
}

fn run_esr(p: &Prepared, e: &EsrParams, out: &mut Outputs) -> Result<()> {
    let mut sites = p.bath.clone().expect("validated");
    if let Some(pol) = e.polarization {
        for s in &mut sites {
            for c in &mut s.composition {
                if c.species.spin.two_i() == 1 {
                    c.polarization = Some(pol);
                }
            }
            s.validate()?;
        }
    }
    let f_max = e.f_max.unwrap_or_else(|| support_bound(&sites));
    let density = match e.method.as_str() {
        "bruteforce" => spectral_density_bruteforce(&sites, e.bin_width)?,
        _ => spectral_density_fft(&sites, e.bin_width, f_max)?,
    };
    density.write_csv(&out.path("density.csv"))?;

    let model = default_model(p)?;
    let field = p.field.unwrap_or_default();
    let centers = transition_centers(&model, &field);
    let center = if e.transition == "plus" { centers.f_plus } else { centers.f_minus };
    let spectrum = synthesize_esr(&density, center, e.contrast, e.extra_fwhm)?;
    spectrum.write_csv(&out.path("spectrum.csv"), "intensity")?;

    let populated = density.populated(1e-12);
    let mut report = serde_json::json!({
        "center_MHz": center,
        "bin_width_MHz": e.bin_width,
        "f_max_MHz": f_max,
        "configurations": configuration_count(&sites).to_string(),
        "total_weight": density.total_weight(),
        "support_width_MHz": density.support_width(1e-12),
        "rms_width_MHz": density.rms_width(),
        "quantization_error_MHz": density.quantization_error,
        "populated_bins": populated.len(),
        "polarization": e.polarization,
        "center_warning": centers.warning,
    });
    if populated.len() <= e.list_bins {
        report["bins"] = serde_json::json!(populated
            .iter()
            .map(|(f, w)| serde_json::json!({ "offset_MHz": f, "weight": w }))
            .collect::<Vec<_>>());
    }
    if let Some(n) = e.fit_lines {
        let init = MultipletModel::guess(&spectrum, n, AmplitudeLaw::Unpolarized)?;
        let (m, r) = fit_multiplet(&spectrum, &init, &FitOptions::default())?;
        report["fit"] = serde_json::json!({ "model": m, "report": r });
    }
    out.json("report.json", &report)
}

fn endor_options(model: &DefectModel, e: &EndorParams) -> Result<TransitionOptions> {
    Ok(TransitionOptions {
        rule: e.rule,
        probe: if e.probe == "zeeman" {
            Some(DriveOperators::zeeman(model)?)
        } else {
            None
        },
        grid_step: e.grid_step,
    })
}

/// Dominant nuclear line of `model` at `field` with the default ENDOR settings.
pub fn dominant_nuclear_line(model: &DefectModel, field: &FieldConfig) -> Result<f64> {
    let e = EndorParams::default();
    let h = crate::hamiltonian::build_hamiltonian(model, field)?;
    let eig = diagonalize(&h, &model.register())?;
    let s = transition_spectrum(&eig, &e.selector, e.band, e.fwhm, &endor_options(model, &e)?)?;
    dynamics::dominant_line(&s)
}

fn run_endor(p: &Prepared, e: &EndorParams, out: &mut Outputs) -> Result<()> {
    let model = p.model.clone().expect("validated");
    let field = p.field.expect("validated");
    let h = crate::hamiltonian::build_hamiltonian(&model, &field)?;
    let eig = diagonalize(&h, &model.register())?;
    let opts = endor_options(&model, e)?;
    let spectrum = transition_spectrum(&eig, &e.selector, e.band, e.fwhm, &opts)?;
    spectrum.write_csv(&out.path("spectrum.csv"), "intensity")?;
    let mut lines = transition_lines(&eig, &e.selector, e.band, &opts)?;
    lines.sort_by(|a, b| a.delta_e.total_cmp(&b.delta_e).then(a.from_index.cmp(&b.from_index)));
    let freqs: Vec<f64> = lines.iter().map(|l| l.delta_e).collect();
    let amps: Vec<f64> = lines.iter().map(|l| l.amplitude).collect();
    format::write_columns(&out.path("lines.csv"), ["freq_MHz", "amplitude"], &freqs, &amps)?;
    out.json(
        "report.json",
        &serde_json::json!({
            "field": field,
            "dominant_line_MHz": dynamics::dominant_line(&spectrum)?,
            "lines": lines.len(),
            "params": e,
            "eigen_residual": eig.max_residual(&h),
        }),
    )
}

fn run_rabi(p: &Prepared, r: &RabiParams, out: &mut Outputs) -> Result<()> {
    let model = p.model.clone().expect("validated");
    let field = p.field.expect("validated");
    let input = p.drive.expect("validated");
    let freq = match input.freq {
        Some(f) => f,
        None => dominant_nuclear_line(&model, &field)?,
    };
    let drive = DriveSpec {
        b_dr: input.b_dr,
        freq,
        theta: input.theta,
        phase: input.phase,
    };
    let times = uniform_times(r.duration_us, r.sample_us);
    let outcome = simulate_nuclear_rabi(&model, &field, &drive, &times, r.dt_us)?;
    outcome.trace.write_csv(&out.path("trace.csv"))?;
    let peaks = spectrum_peaks(&outcome.trace.populations[0], r.sample_us, r.max_peaks);
    let pf: Vec<f64> = peaks.iter().map(|x| x.0).collect();
    let pa: Vec<f64> = peaks.iter().map(|x| x.1).collect();
    format::write_columns(&out.path("peaks.csv"), ["freq_MHz", "relative_amplitude"], &pf, &pa)?;

    // a linear lab-frame drive carries a rotating component of half its amplitude
    let theory = if model.nuclei.len() == 3 {
        let op = Operating::new(model.d_gs, model.gamma_e, field.bz);
        let half = DriveSpec {
            b_dr: drive.b_dr / 2.0,
            ..drive
        };
        let om: Vec<_> = model
            .nuclei
            .iter()
            .map(|n| omega_j(&ladder_coefficients(&n.tensor), &half, &op, &OmegaOptions::default()))
            .collect::<Result<_>>()?;
        let om = [om[0], om[1], om[2]];
        Some(serde_json::json!({
            "omega_abs_MHz": om.map(|w| w.norm()),
            "rabi_frequencies_MHz": rabi_frequencies(om, 1e-9),
            "beat_frequencies_MHz": beat_frequencies(om, 1e-9),
        }))
    } else {
        None
    };
    out.json(
        "report.json",
        &serde_json::json!({
            "drive": drive,
            "field": field,
            "dt_us": outcome.dt,
            "norm_drift": outcome.trace.norm_drift,
            "initial_energies_MHz": outcome.initial_energies,
            "warnings": outcome.warnings,
            "peaks": peaks.iter().map(|(f, a)| serde_json::json!({ "freq_MHz": f, "relative_amplitude": a })).collect::<Vec<_>>(),
            "theory": theory,
        }),
    )
}

fn initial_multiplet(spec: &SpectrumSeries, n: usize, law: AmplitudeLaw, g: &MultipletGuess) -> Result<MultipletModel> {
    let mut m = MultipletModel::guess(spec, n, law)?;
    if let Some(c) = g.center {
        m.center = c;
    }
    if let Some(s) = g.splitting {
        m.splitting = s;
    }
    if let Some(w) = g.fwhm {
        m.fwhm = w;
    }
    m.validate()?;
    Ok(m)
}

fn write_fitted(out: &mut Outputs, spec: &SpectrumSeries, model: &MultipletModel) -> Result<()> {
    let fitted = multiplet_curve(model, &spec.freqs);
    format::write_columns(&out.path("fitted.csv"), ["freq_MHz", "intensity"], &spec.freqs, &fitted)
}

fn run_fit_multiplet(p: &Prepared, f: &FitMultipletParams, out: &mut Outputs) -> Result<()> {
    let spec = p.spectrum.as_ref().expect("validated");
    let init = initial_multiplet(spec, f.n_lines, f.law, &f.guess)?;
    let (m, r) = fit_multiplet(spec, &init, &FitOptions::default())?;
    write_fitted(out, spec, &m)?;
    out.json("report.json", &serde_json::json!({ "model": m, "report": r }))
}

fn run_fit_polarization(p: &Prepared, f: &FitPolarizationParams, out: &mut Outputs) -> Result<()> {
    let spec = p.spectrum.as_ref().expect("validated");
    let order = LineOrder::from_gamma(p.registry.get(&f.isotope)?.gamma()?);
    let has_guess = f.guess.center.is_some() || f.guess.splitting.is_some() || f.guess.fwhm.is_some();
    let init = if has_guess {
        Some(initial_multiplet(spec, 4, AmplitudeLaw::Free, &f.guess)?)
    } else {
        None
    };
    let (res, rep) = fit_polarization(spec, f.model, order, init.as_ref(), &FitOptions::default())?;
    write_fitted(out, spec, &res.fitted)?;
    out.json("report.json", &serde_json::json!({ "result": res, "report": rep }))
}

fn run_fit_decay(p: &Prepared, f: &FitDecayParams, out: &mut Outputs) -> Result<()> {
    let (times, values) = p.trace.as_ref().expect("validated");
    let init = DecayModel {
        t_decay: f.t_decay,
        stretch_n: f.stretch_n,
        amplitude: f.amplitude,
        offset: f.offset,
    };
    let opts = FitOptions::default();
    let (model, report) = fit_decay(times, values, &init, f.free_n, &opts)?;
    let fitted: Vec<f64> = times.iter().map(|t| model.eval(*t)).collect();
    format::write_columns(&out.path("fitted.csv"), ["time_us", "population"], times, &fitted)?;
    let comparison = if f.compare {
        Some(compare_stretch(times, values, &init, &opts)?)
    } else {
        None
    };
    out.json(
        "report.json",
        &serde_json::json!({ "model": model, "report": report, "comparison": comparison }),
    )
}

fn run_sensitivity_dc(p: &Prepared, s: &SensitivityDcParams, out: &mut Outputs) -> Result<()> {
    let mut input = SensitivityInput {
        R: Some(s.R),
        C_m: s.C_m,
        delta_nu_MHz: s.delta_nu_MHz,
        max_slope_per_Hz: s.max_slope_per_Hz,
        ..Default::default()
    };
    let mut fitted = None;
    if let Some(spec) = &p.spectrum {
        let n = s.n_lines.unwrap_or(1);
        let init = MultipletModel::guess(spec, n, AmplitudeLaw::Unpolarized)?;
        let (m, _) = fit_multiplet(spec, &init, &FitOptions::default())?;
        input.max_slope_per_Hz = Some(max_slope(&m)?);
        fitted = Some(m);
    }
    let eta = sensitivity_dc(&input, s.mode)?;
    out.json(
        "report.json",
        &serde_json::json!({ "mode": s.mode, "input": input, "fitted": fitted, "eta_T_per_sqrtHz": eta }),
    )
}

fn run_calibration(p: &Prepared, c: &CalibrationParams, out: &mut Outputs) -> Result<()> {
    let field = p.field.expect("validated");
    let model = default_model(p)?;
    let op = Operating::new(model.d_gs, model.gamma_e, field.bz);
    let gamma_n = match &c.isotope {
        Some(iso) => Some(p.registry.get(iso)?.gamma()?),
        None => None,
    };
    let report = calibration_report(c.omega_n_MHz, c.omega_e_MHz, c.r_volt, &op, gamma_n)?;
    out.json("report.json", &report)
}

/// One point of a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub value: f64,
    pub dir: String,
    pub exit_code: i32,
    pub error: Option<String>,
}

/// Runs the scenario once per value of `axis`, concurrently on the current
/// rayon pool, into `out/point_NNN`. The index is written after every point
/// has finished; failed points are recorded there and do not stop the sweep.
pub fn sweep(source: &Source, axis: &str, values: &[f64], out: &Path) -> Result<Vec<SweepPoint>> {
    use rayon::prelude::*;
    if values.is_empty() {
        return Err(Error::validation("sweep", "values", "empty value list"));
    }
    // fail fast on an axis that does not exist
    prepare(source, &[(axis.to_string(), values[0])])?;
    fs::create_dir_all(out)?;
    let points: Vec<SweepPoint> = values
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let dir = format!("point_{i:03}");
            let summary = run(source, &out.join(&dir), &[(axis.to_string(), *v)]);
            SweepPoint {
                index: i,
                value: *v,
                dir,
                exit_code: summary.exit_code,
                error: summary.error,
            }
        })
        .collect();
    let mut text = format!("index,{axis},dir,exit_code,error\n");
    for pt in &points {
        let err = pt.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        text.push_str(&format!(
            "{},{},{},{},\"{}\"\n",
            pt.index,
            fmt_num(pt.value),
            pt.dir,
            pt.exit_code,
            err
        ));
    }
    fs::write(out.join("index.csv"), text)?;
    Ok(points)
}

/// Reads a `fit` section out of an ESR report, for callers checking splittings.
pub fn report_fit_splitting(report: &serde_json::Value) -> Option<f64> {
    report.get("fit")?.get("model")?.get("splitting")?.as_f64()
}
