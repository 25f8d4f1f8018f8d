//! C interface to `isospin`.
//!
//! Every function returns an [`IsospinStatus`]; on failure the message is
//! available from [`isospin_last_error`] on the same thread. Objects are
//! opaque handles created by `*_new`/`*_load` style functions and released
//! with the matching `*_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use isospin::effective::{omega_j, DriveSpec, OmegaOptions, Operating};
use isospin::error::Error;
use isospin::esr::{self, BathSite, SpectralDensity};
use isospin::fit::{polarization_amplitudes, LineOrder};
use isospin::hamiltonian::{ladder_coefficients, DefectModel, FieldConfig};
use isospin::isotope::IsotopeRegistry;
use isospin::scenario::{self, Source};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsospinStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

pub struct IsospinRegistry {
    inner: IsotopeRegistry,
}

pub struct IsospinModel {
    inner: DefectModel,
}

pub struct IsospinBath {
    sites: Vec<BathSite>,
}

pub struct IsospinDensity {
    inner: SpectralDensity,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(IsospinStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => IsospinStatus::Io,
            e if e.is_validation() => IsospinStatus::InvalidInput,
            _ => IsospinStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IsospinStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(IsospinStatus::InvalidInput, msg.into())
}

fn guard<F>(f: F) -> IsospinStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IsospinStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            IsospinStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn obj_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_box<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn isospin_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn isospin_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The bundled isotope registry. Boron ratios are unset until supplied with
/// [`isospin_registry_set_gamma`].
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isospin_registry_bundled(out: *mut *mut IsospinRegistry) -> IsospinStatus {
    guard(|| put_box(out, IsospinRegistry { inner: IsotopeRegistry::bundled() }))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isospin_registry_load(path: *const c_char, out: *mut *mut IsospinRegistry) -> IsospinStatus {
    guard(|| {
        let inner = IsotopeRegistry::load(Path::new(text(path, "path")?))?;
        put_box(out, IsospinRegistry { inner })
    })
}

/// Sets the gyromagnetic ratio (MHz/G) of one isotope.
///
/// # Safety
/// `registry` must come from this library; `isotope` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn isospin_registry_set_gamma(
    registry: *mut IsospinRegistry,
    isotope: *const c_char,
    gamma_n: f64,
) -> IsospinStatus {
    guard(|| {
        let r = obj_mut(registry, "registry")?;
        r.inner = r.inner.with_gamma(text(isotope, "isotope")?, gamma_n)?;
        Ok(())
    })
}

/// # Safety
/// `registry` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn isospin_registry_free(registry: *mut IsospinRegistry) {
    free(registry)
}

/// The bundled three-nitrogen defect model.
///
/// # Safety
/// `registry` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isospin_model_bundled(
    registry: *const IsospinRegistry,
    out: *mut *mut IsospinModel,
) -> IsospinStatus {
    guard(|| {
        let inner = DefectModel::bundled_default(&obj(registry, "registry")?.inner)?;
        put_box(out, IsospinModel { inner })
    })
}

/// # Safety
/// `path` must be NUL-terminated, `registry` from this library, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_model_load(
    path: *const c_char,
    registry: *const IsospinRegistry,
    out: *mut *mut IsospinModel,
) -> IsospinStatus {
    guard(|| {
        let inner = DefectModel::load(Path::new(text(path, "path")?), &obj(registry, "registry")?.inner)?;
        put_box(out, IsospinModel { inner })
    })
}

/// # Safety
/// `model` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_model_nucleus_count(model: *const IsospinModel, out: *mut usize) -> IsospinStatus {
    guard(|| put(out, obj(model, "model")?.inner.nuclei.len(), "out"))
}

/// Perturbative drive coupling (MHz) of nucleus `index` for a transverse
/// drive of `b_dr` G at in-plane angle `theta`, electron in `m_s = -1`.
///
/// # Safety
/// `model` must come from this library; `re` and `im` must be valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_model_omega(
    model: *const IsospinModel,
    index: usize,
    bz: f64,
    b_dr: f64,
    theta: f64,
    re: *mut f64,
    im: *mut f64,
) -> IsospinStatus {
    guard(|| {
        let m = &obj(model, "model")?.inner;
        let nucleus = m
            .nuclei
            .get(index)
            .ok_or_else(|| invalid(format!("nucleus index {index} out of range (model has {})", m.nuclei.len())))?;
        let op = Operating::new(m.d_gs, m.gamma_e, bz);
        let w = omega_j(
            &ladder_coefficients(&nucleus.tensor),
            &DriveSpec::new(b_dr, 0.0, theta)?,
            &op,
            &OmegaOptions::default(),
        )?;
        put(re, w.re, "re")?;
        put(im, w.im, "im")
    })
}

/// Strongest nuclear transition (MHz) of the exact spectrum at field `bz`.
///
/// # Safety
/// `model` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_model_dominant_line(
    model: *const IsospinModel,
    bz: f64,
    out: *mut f64,
) -> IsospinStatus {
    guard(|| {
        let f = scenario::dominant_nuclear_line(&obj(model, "model")?.inner, &FieldConfig::along_z(bz))?;
        put(out, f, "out")
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn isospin_model_free(model: *mut IsospinModel) {
    free(model)
}

/// An empty bath.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isospin_bath_new(out: *mut *mut IsospinBath) -> IsospinStatus {
    guard(|| put_box(out, IsospinBath { sites: Vec::new() }))
}

/// # Safety
/// `path` must be NUL-terminated, `registry` from this library, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_bath_load(
    path: *const c_char,
    registry: *const IsospinRegistry,
    out: *mut *mut IsospinBath,
) -> IsospinStatus {
    guard(|| {
        let sites = esr::load_bath(Path::new(text(path, "path")?), &obj(registry, "registry")?.inner)?;
        put_box(out, IsospinBath { sites })
    })
}

/// Appends a site fully occupied by `isotope` with coupling `azz` MHz.
///
/// # Safety
/// Handles must come from this library; `isotope` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn isospin_bath_add_isotope(
    bath: *mut IsospinBath,
    registry: *const IsospinRegistry,
    isotope: *const c_char,
    azz: f64,
) -> IsospinStatus {
    guard(|| {
        let b = obj_mut(bath, "bath")?;
        let species = obj(registry, "registry")?.inner.get(text(isotope, "isotope")?)?;
        if !azz.is_finite() {
            return Err(invalid("azz must be finite"));
        }
        b.sites.push(BathSite::pure(species, azz));
        Ok(())
    })
}

/// Appends a natural-abundance site of `element` with
/// `Azz = coupling_per_gamma * gamma_n` for each isotope.
///
/// # Safety
/// Handles must come from this library; `element` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn isospin_bath_add_natural(
    bath: *mut IsospinBath,
    registry: *const IsospinRegistry,
    element: *const c_char,
    coupling_per_gamma: f64,
) -> IsospinStatus {
    guard(|| {
        let b = obj_mut(bath, "bath")?;
        let site = BathSite::natural(&obj(registry, "registry")?.inner, text(element, "element")?, coupling_per_gamma)?;
        b.sites.push(site);
        Ok(())
    })
}

/// # Safety
/// `bath` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_bath_site_count(bath: *const IsospinBath, out: *mut usize) -> IsospinStatus {
    guard(|| put(out, obj(bath, "bath")?.sites.len(), "out"))
}

/// # Safety
/// `bath` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn isospin_bath_free(bath: *mut IsospinBath) {
    free(bath)
}

/// Spectral density by convolution. `f_max <= 0` selects the smallest
/// window that holds the full support.
///
/// # Safety
/// `bath` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_density_fft(
    bath: *const IsospinBath,
    bin_width: f64,
    f_max: f64,
    out: *mut *mut IsospinDensity,
) -> IsospinStatus {
    guard(|| {
        let sites = &obj(bath, "bath")?.sites;
        let f_max = if f_max > 0.0 { f_max } else { esr::support_bound(sites) };
        let inner = esr::spectral_density_fft(sites, bin_width, f_max)?;
        put_box(out, IsospinDensity { inner })
    })
}

/// Spectral density by enumerating every configuration.
///
/// # Safety
/// `bath` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_density_bruteforce(
    bath: *const IsospinBath,
    bin_width: f64,
    out: *mut *mut IsospinDensity,
) -> IsospinStatus {
    guard(|| {
        let inner = esr::spectral_density_bruteforce(&obj(bath, "bath")?.sites, bin_width)?;
        put_box(out, IsospinDensity { inner })
    })
}

/// Number of bins.
///
/// # Safety
/// `density` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_density_len(density: *const IsospinDensity, out: *mut usize) -> IsospinStatus {
    guard(|| put(out, obj(density, "density")?.inner.density.len(), "out"))
}

/// Copies bin offsets (MHz) and densities (1/MHz) into caller buffers of
/// length `len`, which must equal [`isospin_density_len`]. Either buffer
/// may be null to skip it.
///
/// # Safety
/// Non-null buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn isospin_density_copy(
    density: *const IsospinDensity,
    offsets: *mut f64,
    values: *mut f64,
    len: usize,
) -> IsospinStatus {
    guard(|| {
        let d = &obj(density, "density")?.inner;
        if len != d.density.len() {
            return Err(invalid(format!("buffer length {len} does not match {} bins", d.density.len())));
        }
        if !offsets.is_null() {
            ptr::copy_nonoverlapping(d.freq_offsets.as_ptr(), offsets, len);
        }
        if !values.is_null() {
            ptr::copy_nonoverlapping(d.density.as_ptr(), values, len);
        }
        Ok(())
    })
}

/// Bin width (MHz) and the grid quantization bound (MHz).
///
/// # Safety
/// `density` must come from this library; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn isospin_density_info(
    density: *const IsospinDensity,
    bin_width: *mut f64,
    quantization_error: *mut f64,
) -> IsospinStatus {
    guard(|| {
        let d = &obj(density, "density")?.inner;
        if !bin_width.is_null() {
            bin_width.write(d.bin_width);
        }
        if !quantization_error.is_null() {
            quantization_error.write(d.quantization_error);
        }
        Ok(())
    })
}

/// # Safety
/// `density` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn isospin_density_free(density: *mut IsospinDensity) {
    free(density)
}

/// Four binomial line weights for polarization `p`, in ascending frequency;
/// `reversed` selects the order of a negative gyromagnetic ratio.
///
/// # Safety
/// `out` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn isospin_polarization_amplitudes(p: f64, reversed: bool, out: *mut f64) -> IsospinStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let order = if reversed { LineOrder::Reversed } else { LineOrder::Natural };
        let w = polarization_amplitudes(p, order)?;
        ptr::copy_nonoverlapping(w.as_ptr(), out, 4);
        Ok(())
    })
}

/// Runs a scenario file (or `bundle:` name) into `out_dir`. The status
/// reports whether the call could be made; `exit_code` receives the
/// runner's 0/2/3 convention and the manifest lands in `out_dir`.
///
/// # Safety
/// Strings must be NUL-terminated; `exit_code` must be valid.
#[no_mangle]
pub unsafe extern "C" fn isospin_run_scenario(
    scenario_path: *const c_char,
    out_dir: *const c_char,
    exit_code: *mut c_int,
) -> IsospinStatus {
    guard(|| {
        let source = Source::parse(text(scenario_path, "scenario_path")?, None);
        let out = text(out_dir, "out_dir")?;
        if exit_code.is_null() {
            return Err(null("exit_code"));
        }
        let summary = scenario::run(&source, Path::new(out), &[]);
        exit_code.write(summary.exit_code);
        if let Some(e) = summary.error {
            set_error(&e);
        }
        Ok(())
    })
}
