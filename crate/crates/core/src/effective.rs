//! Second-order effective theory of the hyperfine-enhanced nuclear drive.
//!
//! Virtual transitions through the other electronic levels turn the
//! transverse hyperfine terms into an effective RF coupling for each nucleus,
//! `omega_j = -gamma_e B_dr (A1 e^{i theta} + A2* e^{-i theta}) / (D - gamma_e Bz)`,
//! far larger than the bare nuclear Zeeman drive.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{ladder_coefficients, HyperfineTensor, LadderCoefficients};
use crate::spin::Operator;

/// Smallest electronic gap for which the perturbative expressions are used.
pub const MIN_GAP_MHZ: f64 = 10.0;

/// Electronic level whose nuclear sublevels are driven.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectronLevel {
    #[default]
    MinusOne,
    Zero,
    PlusOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct DriveSpec {
    /// Transverse drive amplitude in G.
    pub b_dr: f64,
    /// Drive frequency in MHz.
    pub freq: f64,
    /// In-plane angle to x in radians.
    #[serde(default)]
    pub theta: f64,
    /// Phase of the lab-frame drive `cos(2 pi f t + phase)`.
    #[serde(default)]
    pub phase: f64,
}

impl DriveSpec {
    pub fn new(b_dr: f64, freq: f64, theta: f64) -> Result<Self> {
        let d = DriveSpec {
            b_dr,
            freq,
            theta,
            phase: 0.0,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_dr >= 0.0) || !self.b_dr.is_finite() {
            return Err(Error::invalid(format!("drive amplitude must be non-negative, got {}", self.b_dr)));
        }
        if !self.freq.is_finite() || !self.theta.is_finite() || !self.phase.is_finite() {
            return Err(Error::invalid("drive frequency and angle must be finite"));
        }
        Ok(())
    }
}

/// Parameters shared by the perturbative expressions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Operating {
    pub d_gs: f64,
    pub gamma_e: f64,
    pub bz: f64,
}

impl Operating {
    pub fn new(d_gs: f64, gamma_e: f64, bz: f64) -> Self {
        Operating { d_gs, gamma_e, bz }
    }

    /// `D - gamma_e Bz`.
    pub fn gap(&self) -> f64 {
        self.d_gs - self.gamma_e * self.bz
    }

    fn guarded_gap(&self) -> Result<f64> {
        let gap = self.gap();
        if !(gap.abs() > MIN_GAP_MHZ) {
            return Err(Error::NearAntiCrossing {
                gap,
                min: MIN_GAP_MHZ,
            });
        }
        Ok(gap)
    }

    /// `1/(D - gamma_e Bz)` or its level variant.
    fn inverse_denominator(&self, level: ElectronLevel) -> Result<f64> {
        let minus = self.guarded_gap()?;
        let plus = self.d_gs + self.gamma_e * self.bz;
        if level != ElectronLevel::MinusOne && !(plus.abs() > MIN_GAP_MHZ) {
            return Err(Error::NearAntiCrossing {
                gap: plus,
                min: MIN_GAP_MHZ,
            });
        }
        Ok(match level {
            ElectronLevel::MinusOne => 1.0 / minus,
            ElectronLevel::PlusOne => 1.0 / plus,
            ElectronLevel::Zero => 1.0 / plus + 1.0 / minus,
        })
    }
}

/// Options for [`omega_j`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct OmegaOptions {
    pub level: ElectronLevel,
    /// Adds the bare nuclear Zeeman drive `-gamma_n B_dr e^{-i theta}/2` when set.
    pub bare_gamma_n: Option<f64>,
}

/// Effective drive coupling of one nucleus in MHz.
pub fn omega_j(
    lc: &LadderCoefficients,
    drive: &DriveSpec,
    op: &Operating,
    options: &OmegaOptions,
) -> Result<Complex64> {
    drive.validate()?;
    let inv = op.inverse_denominator(options.level)?;
    let phase = Complex64::from_polar(1.0, drive.theta);
    let mut w = -op.gamma_e * drive.b_dr * (lc.a1 * phase + lc.a2.conj() * phase.conj()) * inv;
    if let Some(g) = options.bare_gamma_n {
        w -= 0.5 * g * drive.b_dr * phase.conj();
    }
    Ok(w)
}

/// Nuclear coupling matrix on `|m1 m2 m3>`, up-state first, index `4 b1 + 2 b2 + b3`.
pub fn rabi_matrix(omegas: [Complex64; 3]) -> Operator {
    let mut m = DMatrix::<Complex64>::zeros(8, 8);
    for (j, w) in omegas.iter().enumerate() {
        let bit = 1usize << (2 - j);
        for r in (0..8).filter(|r| r & bit == 0) {
            let c = r | bit;
            m[(r, c)] = *w;
            m[(c, r)] = w.conj();
        }
    }
    Operator::hermitian(m).expect("coupling matrix is Hermitian by construction")
}

/// Closed-form eigenvalues `+-|w1| +-|w2| +-|w3|`, ascending.
pub fn rabi_eigenvalues(omegas: [Complex64; 3]) -> Vec<f64> {
    let a = omegas.map(|w| w.norm());
    let mut ev: Vec<f64> = (0..8)
        .map(|k| {
            (0..3)
                .map(|j| if k >> j & 1 == 1 { -a[j] } else { a[j] })
                .sum()
        })
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Distinct Rabi frequencies `2 ||w1| +- |w2| +- |w3||`, ascending, merged within `tol`.
pub fn rabi_frequencies(omegas: [Complex64; 3], tol: f64) -> Vec<f64> {
    let a = omegas.map(|w| w.norm());
    let mut f: Vec<f64> = [
        a[0] + a[1] + a[2],
        a[0] + a[1] - a[2],
        a[0] - a[1] + a[2],
        a[0] - a[1] - a[2],
    ]
    .iter()
    .map(|x| 2.0 * x.abs())
    .collect();
    f.sort_by(f64::total_cmp);
    f.dedup_by(|b, a| (*b - *a).abs() <= tol);
    f
}

/// Every positive pairwise difference of the coupling-matrix eigenvalues,
/// merged within `tol`. These are all frequencies that can appear in
/// population beats under the effective Hamiltonian.
pub fn beat_frequencies(omegas: [Complex64; 3], tol: f64) -> Vec<f64> {
    let ev = rabi_eigenvalues(omegas);
    let mut f: Vec<f64> = Vec::new();
    for (i, a) in ev.iter().enumerate() {
        for b in &ev[i + 1..] {
            let d = b - a;
            if d > tol {
                f.push(d);
            }
        }
    }
    f.sort_by(f64::total_cmp);
    f.dedup_by(|b, a| (*b - *a).abs() <= tol);
    f
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnhancementReport {
    /// MHz/G, magnitude.
    pub gamma_eff: f64,
    /// `gamma_eff / |gamma_n|`, when a nuclear ratio was supplied.
    pub enhancement: Option<f64>,
    pub transverse_magnitude: f64,
    /// `D - gamma_e Bz` in MHz.
    pub gap: f64,
    /// Margin of `|gap|` above the perturbative guard, in MHz.
    pub guard_margin: f64,
}

/// `gamma_eff = gamma_e sqrt(Axx^2 + Ayy^2 + 2 Axy^2) / (sqrt2 (D - gamma_e Bz))`.
pub fn gamma_eff(t: &HyperfineTensor, op: &Operating, gamma_n: Option<f64>) -> Result<EnhancementReport> {
    let gap = op.guarded_gap()?;
    let magnitude = t.transverse_magnitude();
    let g = (op.gamma_e * magnitude * FRAC_1_SQRT_2 / gap).abs();
    Ok(EnhancementReport {
        gamma_eff: g,
        enhancement: gamma_n.filter(|gn| *gn != 0.0).map(|gn| g / gn.abs()),
        transverse_magnitude: magnitude,
        gap,
        guard_margin: gap.abs() - MIN_GAP_MHZ,
    })
}

/// `2 gamma_e |A1 e^{i theta} + A2* e^{-i theta}| / (D - gamma_e Bz)`, the
/// single-nucleus value before angle averaging.
pub fn gamma_eff_at_angle(t: &HyperfineTensor, op: &Operating, theta: f64) -> Result<f64> {
    let gap = op.guarded_gap()?;
    let lc = ladder_coefficients(t);
    let phase = Complex64::from_polar(1.0, theta);
    Ok((2.0 * op.gamma_e * (lc.a1 * phase + lc.a2.conj() * phase.conj()).norm() / gap).abs())
}

/// Inverse of [`gamma_eff`] for the transverse magnitude.
pub fn infer_transverse_magnitude(gamma_eff: f64, op: &Operating) -> Result<f64> {
    let gap = op.guarded_gap()?;
    if !(gamma_eff >= 0.0) || !gamma_eff.is_finite() {
        return Err(Error::invalid(format!("gamma_eff must be non-negative, got {gamma_eff}")));
    }
    Ok((gamma_eff * std::f64::consts::SQRT_2 * gap / op.gamma_e).abs())
}

/// `(Omega_n / R_volt) / Omega_e * gamma_e`.
pub fn calibrate_gamma_eff(omega_n: f64, omega_e: f64, r_volt: f64, gamma_e: f64) -> Result<f64> {
    for (name, v) in [("Omega_n", omega_n), ("Omega_e", omega_e), ("R_volt", r_volt), ("gamma_e", gamma_e)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(omega_n / r_volt / omega_e * gamma_e)
}

/// Nuclear Rabi frequency needed to observe `gamma_eff` at the given drive ratio.
pub fn required_omega_n(gamma_eff: f64, omega_e: f64, r_volt: f64, gamma_e: f64) -> Result<f64> {
    calibrate_gamma_eff(1.0, omega_e, r_volt, gamma_e).map(|unit| gamma_eff / unit)
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub omega_n_MHz: f64,
    pub omega_e_MHz: f64,
    pub r_volt: f64,
    pub gamma_e_MHz_per_G: f64,
    pub d_gs_MHz: f64,
    pub bz_G: f64,
    pub gamma_eff_MHz_per_G: f64,
    pub enhancement: Option<f64>,
    pub transverse_magnitude_MHz: f64,
    pub gap_MHz: f64,
    pub guard_margin_MHz: f64,
}

/// Measured Rabi frequencies to effective ratio and implied transverse coupling.
pub fn calibration_report(
    omega_n: f64,
    omega_e: f64,
    r_volt: f64,
    op: &Operating,
    gamma_n: Option<f64>,
) -> Result<CalibrationReport> {
    let g = calibrate_gamma_eff(omega_n, omega_e, r_volt, op.gamma_e)?;
    let magnitude = infer_transverse_magnitude(g, op)?;
    let gap = op.gap();
    Ok(CalibrationReport {
        omega_n_MHz: omega_n,
        omega_e_MHz: omega_e,
        r_volt,
        gamma_e_MHz_per_G: op.gamma_e,
        d_gs_MHz: op.d_gs,
        bz_G: op.bz,
        gamma_eff_MHz_per_G: g,
        enhancement: gamma_n.filter(|gn| *gn != 0.0).map(|gn| g / gn.abs()),
        transverse_magnitude_MHz: magnitude,
        gap_MHz: gap,
        guard_margin_MHz: gap.abs() - MIN_GAP_MHZ,
    })
}
