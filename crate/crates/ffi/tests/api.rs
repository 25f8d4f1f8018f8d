use std::ffi::{CStr, CString};
use std::ptr;

use isospin_ffi::*;

fn last_error() -> String {
    let p = isospin_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn three_nitrogen_density_is_binomial() {
    unsafe {
        let mut reg = ptr::null_mut();
        assert_eq!(isospin_registry_bundled(&mut reg), IsospinStatus::Ok);
        let mut bath = ptr::null_mut();
        assert_eq!(isospin_bath_new(&mut bath), IsospinStatus::Ok);
        for _ in 0..3 {
            assert_eq!(isospin_bath_add_isotope(bath, reg, c("15N").as_ptr(), -65.9), IsospinStatus::Ok);
        }
        let mut count = 0usize;
        assert_eq!(isospin_bath_site_count(bath, &mut count), IsospinStatus::Ok);
        assert_eq!(count, 3);

        let mut fft = ptr::null_mut();
        assert_eq!(isospin_density_fft(bath, 0.1, 0.0, &mut fft), IsospinStatus::Ok);
        let mut brute = ptr::null_mut();
        assert_eq!(isospin_density_bruteforce(bath, 0.1, &mut brute), IsospinStatus::Ok);

        let mut n = 0usize;
        assert_eq!(isospin_density_len(fft, &mut n), IsospinStatus::Ok);
        let (mut off, mut val) = (vec![0.0; n], vec![0.0; n]);
        assert_eq!(isospin_density_copy(fft, off.as_mut_ptr(), val.as_mut_ptr(), n), IsospinStatus::Ok);
        let (mut bw, mut q) = (0.0, -1.0);
        assert_eq!(isospin_density_info(fft, &mut bw, &mut q), IsospinStatus::Ok);
        assert_eq!(bw, 0.1);
        assert_eq!(q, 0.0);
        let mut populated: Vec<(f64, f64)> =
            off.iter().zip(&val).filter(|(_, v)| **v * bw > 1e-12).map(|(f, v)| (*f, v * bw)).collect();
        populated.sort_by(|a, b| a.0.total_cmp(&b.0));
        let weights: Vec<f64> = populated.iter().map(|p| p.1).collect();
        assert_eq!(weights.len(), 4);
        for (w, e) in weights.iter().zip([1.0, 3.0, 3.0, 1.0]) {
            assert!((w - e / 8.0).abs() < 1e-12);
        }

        let mut m = 0usize;
        isospin_density_len(brute, &mut m);
        let mut bval = vec![0.0; m];
        assert_eq!(isospin_density_copy(brute, ptr::null_mut(), bval.as_mut_ptr(), m), IsospinStatus::Ok);
        let total: f64 = bval.iter().sum::<f64>() * bw;
        assert!((total - 1.0).abs() < 1e-12);

        assert_eq!(isospin_density_copy(fft, off.as_mut_ptr(), ptr::null_mut(), n + 1), IsospinStatus::InvalidInput);
        assert!(last_error().contains("buffer length"));

        isospin_density_free(fft);
        isospin_density_free(brute);
        isospin_bath_free(bath);
        isospin_registry_free(reg);
    }
}

#[test]
fn boron_needs_a_user_ratio() {
    unsafe {
        let mut reg = ptr::null_mut();
        isospin_registry_bundled(&mut reg);
        let mut bath = ptr::null_mut();
        isospin_bath_new(&mut bath);
        assert_eq!(isospin_bath_add_natural(bath, reg, c("B").as_ptr(), 100.0), IsospinStatus::InvalidInput);
        assert!(last_error().contains("10B") || last_error().contains("11B"), "{}", last_error());
        assert_eq!(isospin_registry_set_gamma(reg, c("10B").as_ptr(), 4.575e-4), IsospinStatus::Ok);
        assert_eq!(isospin_registry_set_gamma(reg, c("11B").as_ptr(), 1.366e-3), IsospinStatus::Ok);
        assert_eq!(isospin_bath_add_natural(bath, reg, c("B").as_ptr(), 100.0), IsospinStatus::Ok);
        isospin_bath_free(bath);
        isospin_registry_free(reg);
    }
}

#[test]
fn model_couplings_and_lines() {
    unsafe {
        let mut reg = ptr::null_mut();
        isospin_registry_bundled(&mut reg);
        let mut model = ptr::null_mut();
        assert_eq!(isospin_model_bundled(reg, &mut model), IsospinStatus::Ok);
        let mut n = 0usize;
        isospin_model_nucleus_count(model, &mut n);
        assert_eq!(n, 3);
        let mut mags = Vec::new();
        for j in 0..3 {
            let (mut re, mut im) = (0.0, 0.0);
            assert_eq!(isospin_model_omega(model, j, 760.0, 40.0, 0.0, &mut re, &mut im), IsospinStatus::Ok);
            mags.push(re.hypot(im));
        }
        assert!(mags.iter().all(|m| *m > 0.0 && m.is_finite()));
        let (mut re, mut im) = (0.0, 0.0);
        assert_eq!(isospin_model_omega(model, 3, 760.0, 40.0, 0.0, &mut re, &mut im), IsospinStatus::InvalidInput);
        // too close to the anti-crossing
        assert_eq!(
            isospin_model_omega(model, 0, 3480.0 / 2.8, 40.0, 0.0, &mut re, &mut im),
            IsospinStatus::InvalidInput
        );
        let mut line = 0.0;
        assert_eq!(isospin_model_dominant_line(model, 760.0, &mut line), IsospinStatus::Ok);
        assert!((line - 66.2).abs() < 0.1, "{line}");
        isospin_model_free(model);
        isospin_registry_free(reg);
    }
}

#[test]
fn null_handles_and_bad_paths() {
    unsafe {
        let mut n = 0usize;
        assert_eq!(isospin_bath_site_count(ptr::null(), &mut n), IsospinStatus::NullPointer);
        assert!(last_error().contains("bath"));
        assert_eq!(isospin_registry_bundled(ptr::null_mut()), IsospinStatus::NullPointer);
        let mut reg = ptr::null_mut();
        assert_eq!(isospin_registry_load(c("/nonexistent/isotopes.toml").as_ptr(), &mut reg), IsospinStatus::Io);
        assert!(reg.is_null());
        isospin_registry_free(ptr::null_mut());
        isospin_density_free(ptr::null_mut());
        let mut w = [0.0; 4];
        assert_eq!(isospin_polarization_amplitudes(0.5, false, w.as_mut_ptr()), IsospinStatus::Ok);
        assert_eq!(w, [0.125, 0.375, 0.375, 0.125]);
        assert_eq!(isospin_polarization_amplitudes(1.5, false, w.as_mut_ptr()), IsospinStatus::InvalidInput);
        assert!(isospin_last_error().is_null() || !last_error().is_empty());
    }
}

#[test]
fn success_clears_the_last_error() {
    unsafe {
        let mut w = [0.0; 4];
        isospin_polarization_amplitudes(-1.0, false, w.as_mut_ptr());
        assert!(!isospin_last_error().is_null());
        isospin_polarization_amplitudes(0.2, true, w.as_mut_ptr());
        assert!(isospin_last_error().is_null());
        assert!(w[0] < w[3]);
    }
}

#[test]
fn scenario_runs_through_the_c_entry_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    unsafe {
        let mut code = -1;
        let status = isospin_run_scenario(
            c("bundle:scenarios/sensitivity_ac_paper.scn").as_ptr(),
            c(out.to_str().unwrap()).as_ptr(),
            &mut code,
        );
        assert_eq!(status, IsospinStatus::Ok);
        assert_eq!(code, 0);
        assert!(out.join("report.json").exists());

        let bad = dir.path().join("bad.scn");
        std::fs::write(&bad, "format_version = 1\nkind = \"nonsense\"\n").unwrap();
        let status = isospin_run_scenario(c(bad.to_str().unwrap()).as_ptr(), c(out.to_str().unwrap()).as_ptr(), &mut code);
        assert_eq!(status, IsospinStatus::Ok);
        assert_eq!(code, 2);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(isospin_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
