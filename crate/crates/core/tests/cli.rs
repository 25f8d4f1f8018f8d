use std::path::Path;
use std::process::{Command, Output};

use isospin::esr::SpectrumSeries;
use isospin::fit::{polarization_amplitudes, LineOrder};
use serde_json::Value;

fn isospin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isospin")).args(args).output().unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn esr_scenario_fit_recovers_the_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("esr");
    let run = isospin(&["run", "--scenario", "bundle:scenarios/esr_h10b15n.scn", "--out", s(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let r = report(&out);
    let splitting = isospin::scenario::report_fit_splitting(&r).unwrap();
    let bin = r["bin_width_MHz"].as_f64().unwrap();
    assert!((splitting.abs() - 65.9).abs() <= bin, "{splitting}");

    let spec = SpectrumSeries::read_csv(&out.join("spectrum.csv"), "intensity").unwrap();
    assert!(spec.freqs.len() > 100);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["inputs"].as_array().unwrap().iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
    assert!(manifest["error"].is_null());
    assert!(!out.join("FAILED").exists());
}

#[test]
fn ac_sensitivity_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ac");
    let run = isospin(&["run", "--scenario", "bundle:scenarios/sensitivity_ac_paper.scn", "--out", s(&out)]);
    assert!(run.status.success());
    let eta = report(&out)["eta_T_per_sqrtHz"].as_f64().unwrap();
    assert!((eta - 7e-6).abs() < 1.05e-6, "{eta}");
}

#[test]
fn missing_boron_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("v.scn");
    std::fs::write(&scn, "format_version = 1\nkind = \"validate\"\n").unwrap();
    let check = isospin(&["run", "--scenario", s(&scn), "--validate-only"]);
    assert_eq!(check.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&check.stderr);
    assert!(msg.contains("10B") && msg.contains("gamma_n_MHz_per_G"), "{msg}");

    let out = dir.path().join("out");
    let run = isospin(&["run", "--scenario", s(&scn), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(out.join("FAILED").exists());
    assert!(out.join("manifest.json").exists());

    // supplying the ratios makes the same registry complete
    std::fs::write(
        &scn,
        "format_version = 1\nkind = \"validate\"\n[isotope_gamma]\n\"10B\" = 4.575e-4\n\"11B\" = 1.366e-3\n",
    )
    .unwrap();
    let run = isospin(&["run", "--scenario", s(&scn), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(!out.join("FAILED").exists());
}

#[test]
fn field_sweep_moves_the_nuclear_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let run = isospin(&[
        "sweep",
        "--scenario",
        "bundle:scenarios/endor_3x15n.scn",
        "--axis",
        "field.bz",
        "--values",
        "210,760",
        "--out",
        s(&out),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let index = std::fs::read_to_string(out.join("index.csv")).unwrap();
    assert!(index.starts_with("index,field.bz,dir,exit_code,error\n"));
    assert_eq!(index.lines().count(), 3);
    let line = |k: usize| report(&out.join(format!("point_{k:03}")))["dominant_line_MHz"].as_f64().unwrap();
    let (low, high) = (line(0), line(1));
    assert!((low - 66.0).abs() < 0.15, "{low}");
    assert!((high - 66.2).abs() < 0.15, "{high}");
}

#[test]
fn polarization_sweep_weights_follow_the_binomial_law() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let run = isospin(&[
        "--workers",
        "2",
        "sweep",
        "--scenario",
        "bundle:scenarios/esr_polarized_15n.scn",
        "--axis",
        "params.polarization",
        "--values",
        "0.5,0.632",
        "--out",
        s(&out),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for (k, p) in [0.5, 0.632].into_iter().enumerate() {
        let r = report(&out.join(format!("point_{k:03}")));
        let bins = r["bins"].as_array().unwrap();
        assert_eq!(bins.len(), 4);
        let expected = polarization_amplitudes(p, LineOrder::Reversed).unwrap();
        for (b, e) in bins.iter().zip(expected) {
            assert!((b["weight"].as_f64().unwrap() - e).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_sweep_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = isospin(&[
        "sweep",
        "--scenario",
        "bundle:scenarios/endor_3x15n.scn",
        "--axis",
        "field.bz",
        "--values",
        "",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(run.status.code(), Some(2));
    let bad_axis = isospin(&[
        "sweep",
        "--scenario",
        "bundle:scenarios/endor_3x15n.scn",
        "--axis",
        "field.nope",
        "--values",
        "1",
        "--out",
        s(&dir.path().join("y")),
    ]);
    assert_eq!(bad_axis.status.code(), Some(2));
}

#[test]
fn failed_points_are_recorded_and_the_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    // 1242.857 G puts the -1 level at the ground-state anti-crossing
    let run = isospin(&[
        "sweep",
        "--scenario",
        "bundle:scenarios/calibration.scn",
        "--axis",
        "field.bz",
        "--values",
        "746.4285714285714,1242.857142857143",
        "--out",
        s(&out),
    ]);
    assert!(run.status.success());
    let index = std::fs::read_to_string(out.join("index.csv")).unwrap();
    let rows: Vec<&str> = index.lines().skip(1).collect();
    assert!(rows[0].contains(",0,"), "{index}");
    assert!(rows[1].contains(",2,"), "{index}");
    assert!(out.join("point_001").join("FAILED").exists());
}

#[test]
fn overrides_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let run = isospin(&[
        "run",
        "--scenario",
        "bundle:scenarios/sensitivity_ac_paper.scn",
        "--set",
        "params.C_max=0.04",
        "--out",
        s(&out),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let eta = report(&out)["eta_T_per_sqrtHz"].as_f64().unwrap();
    assert!((eta - 3.686e-6).abs() < 1e-8, "{eta}");

    let bad = isospin(&["run", "--scenario", "bundle:scenarios/sensitivity_ac_paper.scn", "--set", "params.nope=1", "--validate-only"]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = isospin(&["run", "--scenario", s(&dir.path().join("absent.scn")), "--validate-only"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn bundle_override_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(data.join("scenarios")).unwrap();
    std::fs::write(
        data.join("scenarios/sensitivity_ac_paper.scn"),
        "format_version = 1\nkind = \"sensitivity-ac\"\n[params]\nC_max = 0.04\nN_photons = 0.27\ntau_s = 501e-9\nT2_s = 501e-9\nt_I_s = 1e-6\nt_R_s = 1e-6\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let run = Command::new(env!("CARGO_BIN_EXE_isospin"))
        .env(isospin::scenario::DATA_DIR_ENV, &data)
        .args(["run", "--scenario", "bundle:scenarios/sensitivity_ac_paper.scn", "--out", s(&out)])
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let eta = report(&out)["eta_T_per_sqrtHz"].as_f64().unwrap();
    assert!((eta - 3.686e-6).abs() < 1e-8, "{eta}");
}
