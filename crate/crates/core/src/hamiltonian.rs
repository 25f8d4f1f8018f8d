//! Ground-state spin Hamiltonian of the defect and its explicitly modeled nuclei.
//!
//! ```text
//! H = D Sz^2 + gamma_e (B . S) - sum_j gamma_n^j (B . I^j) + sum_j S A^j I^j
//! ```
//!
//! Hyperfine tensors carry the mirror symmetry of the defect: the four
//! entries coupling the in-plane and out-of-plane axes vanish.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::isotope::{IsotopeRegistry, IsotopeSpecies};
use crate::spin::{EmbeddedSpins, Operator, SpinQuantum, SpinRegister};
use crate::{D_GS, GAMMA_E};

/// Largest number of explicitly modeled nuclei.
pub const MAX_NUCLEI: usize = 6;

/// Hyperfine tensor in MHz with `Ayx = Axy` and vanishing xz/yz blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperfineTensor {
    pub axx: f64,
    pub ayy: f64,
    pub axy: f64,
    pub azz: f64,
}

impl HyperfineTensor {
    pub fn new(axx: f64, ayy: f64, axy: f64, azz: f64) -> Self {
        HyperfineTensor { axx, ayy, axy, azz }
    }

    /// Purely secular coupling.
    pub fn secular(azz: f64) -> Self {
        HyperfineTensor::new(0.0, 0.0, 0.0, azz)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.axx, self.axy, 0.0, //
            self.axy, self.ayy, 0.0, //
            0.0, 0.0, self.azz,
        )
    }

    /// `sqrt(Axx^2 + Ayy^2 + 2 Axy^2)`.
    pub fn transverse_magnitude(&self) -> f64 {
        (self.axx * self.axx + self.ayy * self.ayy + 2.0 * self.axy * self.axy).sqrt()
    }

    /// Copy with the in-plane block scaled so the transverse magnitude equals `target`.
    pub fn with_transverse_magnitude(&self, target: f64) -> Result<Self> {
        let current = self.transverse_magnitude();
        if current == 0.0 {
            return Err(Error::invalid("tensor has no transverse part to scale"));
        }
        rescale_transverse(self, current / target)
    }

    pub fn is_finite(&self) -> bool {
        self.axx.is_finite() && self.ayy.is_finite() && self.axy.is_finite() && self.azz.is_finite()
    }
}

/// Ladder-operator form of the transverse hyperfine coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LadderCoefficients {
    /// Coefficient of `S+ I-` (flip-flop).
    pub a1: f64,
    /// Coefficient of `S+ I+` (flip-flip).
    pub a2: Complex64,
}

/// `A1 = (Axx + Ayy)/4`, `A2 = (Axx - Ayy)/4 + Axy/(2i)`.
pub fn ladder_coefficients(t: &HyperfineTensor) -> LadderCoefficients {
    LadderCoefficients {
        a1: 0.25 * (t.axx + t.ayy),
        a2: Complex64::new(0.25 * (t.axx - t.ayy), -0.5 * t.axy),
    }
}

/// Inverse of [`ladder_coefficients`] given the secular part.
pub fn tensor_from_ladder(lc: &LadderCoefficients, azz: f64) -> HyperfineTensor {
    let sum = 4.0 * lc.a1;
    let diff = 4.0 * lc.a2.re;
    HyperfineTensor {
        axx: 0.5 * (sum + diff),
        ayy: 0.5 * (sum - diff),
        axy: -2.0 * lc.a2.im,
        azz,
    }
}

/// Rotates the in-plane block about z by `phi`: `A -> R A R^T`.
pub fn rotate_tensor(t: &HyperfineTensor, phi: f64) -> HyperfineTensor {
    let (s, c) = phi.sin_cos();
    let (xx, yy, xy) = (t.axx, t.ayy, t.axy);
    HyperfineTensor {
        axx: c * c * xx - 2.0 * c * s * xy + s * s * yy,
        ayy: s * s * xx + 2.0 * c * s * xy + c * c * yy,
        axy: c * s * (xx - yy) + (c * c - s * s) * xy,
        azz: t.azz,
    }
}

/// Rescales every component by the ratio of gyromagnetic ratios.
pub fn isotope_substitute(
    t: &HyperfineTensor,
    from: &IsotopeSpecies,
    to: &IsotopeSpecies,
) -> Result<HyperfineTensor> {
    let g_from = from.gamma()?;
    let g_to = to.gamma()?;
    if g_from == 0.0 {
        return Err(Error::invalid(format!(
            "source isotope {} has zero gyromagnetic ratio",
            from.name
        )));
    }
    let r = g_to / g_from;
    Ok(HyperfineTensor {
        axx: t.axx * r,
        ayy: t.ayy * r,
        axy: t.axy * r,
        azz: t.azz * r,
    })
}

/// Divides the transverse components by `factor`, leaving `Azz` untouched.
pub fn rescale_transverse(t: &HyperfineTensor, factor: f64) -> Result<HyperfineTensor> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::invalid(format!("rescale factor must be positive, got {factor}")));
    }
    Ok(HyperfineTensor {
        axx: t.axx / factor,
        ayy: t.ayy / factor,
        axy: t.axy / factor,
        azz: t.azz,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Nucleus {
    pub species: IsotopeSpecies,
    pub tensor: HyperfineTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefectModel {
    pub d_gs: f64,
    pub gamma_e: f64,
    pub nuclei: Vec<Nucleus>,
    /// Nuclear quadrupole terms; reserved, must be false.
    pub quadrupole: bool,
}

impl DefectModel {
    pub fn bare() -> Self {
        DefectModel {
            d_gs: D_GS,
            gamma_e: GAMMA_E,
            nuclei: Vec::new(),
            quadrupole: false,
        }
    }

    pub fn with_nuclei(nuclei: Vec<Nucleus>) -> Self {
        DefectModel {
            nuclei,
            ..DefectModel::bare()
        }
    }

    /// Three nuclei sharing `base`, rotated by 0, 2pi/3 and 4pi/3.
    pub fn threefold(species: &IsotopeSpecies, base: &HyperfineTensor) -> Self {
        let nuclei = (0..3)
            .map(|k| Nucleus {
                species: species.clone(),
                tensor: rotate_tensor(base, 2.0 * PI * k as f64 / 3.0),
            })
            .collect();
        DefectModel::with_nuclei(nuclei)
    }

    pub fn register(&self) -> SpinRegister {
        let mut subsystems = vec![SpinQuantum::ONE];
        subsystems.extend(self.nuclei.iter().map(|n| n.species.spin));
        SpinRegister::new(subsystems).expect("register is never empty")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_gs > 0.0) || !self.d_gs.is_finite() {
            return Err(Error::validation("model", "D_gs_MHz", "must be positive"));
        }
        if !self.gamma_e.is_finite() {
            return Err(Error::validation("model", "gamma_e_MHz_per_G", "must be finite"));
        }
        if self.quadrupole {
            return Err(Error::validation(
                "model",
                "quadrupole",
                "nuclear quadrupole terms are not supported",
            ));
        }
        if self.nuclei.len() > MAX_NUCLEI {
            return Err(Error::validation(
                "model",
                "nucleus",
                format!("{} nuclei exceed the limit of {MAX_NUCLEI}", self.nuclei.len()),
            ));
        }
        for (j, n) in self.nuclei.iter().enumerate() {
            let record = format!("model nucleus {j} ({})", n.species.name);
            n.species.gamma().map_err(|_| {
                Error::validation(&record, "isotope", "gyromagnetic ratio not populated in registry")
            })?;
            if !n.tensor.is_finite() {
                return Err(Error::validation(&record, "tensor", "non-finite component"));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str, registry: &IsotopeRegistry) -> Result<Self> {
        let file: ModelFile = format::parse_toml(text, origin)?;
        let mut nuclei = Vec::with_capacity(file.nucleus.len());
        for (j, rec) in file.nucleus.iter().enumerate() {
            let species = registry.get(&rec.isotope).map_err(|e| {
                Error::validation(format!("{origin}: nucleus {j}"), "isotope", e.to_string())
            })?;
            let mut tensor = HyperfineTensor::new(rec.Axx_MHz, rec.Ayy_MHz, rec.Axy_MHz, rec.Azz_MHz);
            if let Some(phi) = rec.rotation_rad {
                tensor = rotate_tensor(&tensor, phi);
            }
            if let Some(divisor) = file.transverse_divisor {
                tensor = rescale_transverse(&tensor, divisor).map_err(|e| {
                    Error::validation(origin, "transverse_divisor", e.to_string())
                })?;
            }
            nuclei.push(Nucleus {
                species: species.clone(),
                tensor,
            });
        }
        let model = DefectModel {
            d_gs: file.D_gs_MHz.unwrap_or(D_GS),
            gamma_e: file.gamma_e_MHz_per_G.unwrap_or(GAMMA_E),
            nuclei,
            quadrupole: file.quadrupole.unwrap_or(false),
        };
        model.validate().map_err(|e| match e {
            Error::Validation { record, field, message } => Error::Validation {
                record: format!("{origin}: {record}"),
                field,
                message,
            },
            other => other,
        })?;
        Ok(model)
    }

    pub fn load(path: &Path, registry: &IsotopeRegistry) -> Result<Self> {
        let text = format::read_text(path)?;
        Self::parse(&text, &path.display().to_string(), registry)
    }

    /// Default three-15N model with transverse magnitude 30 MHz.
    pub fn bundled_default(registry: &IsotopeRegistry) -> Result<Self> {
        Self::parse(
            include_str!("../data/model_3x15n.toml"),
            "bundle:model_3x15n.toml",
            registry,
        )
    }

    /// Same geometry with the unscaled ab-initio transverse magnitude (142 MHz).
    pub fn bundled_ab_initio(registry: &IsotopeRegistry) -> Result<Self> {
        Self::parse(
            include_str!("../data/model_3x15n_abinitio.toml"),
            "bundle:model_3x15n_abinitio.toml",
            registry,
        )
    }
}

#[allow(non_snake_case)]
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NucleusRecord {
    isotope: String,
    #[serde(default)]
    Axx_MHz: f64,
    #[serde(default)]
    Ayy_MHz: f64,
    #[serde(default)]
    Axy_MHz: f64,
    Azz_MHz: f64,
    rotation_rad: Option<f64>,
}

#[allow(non_snake_case)]
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[allow(dead_code)]
    format_version: u32,
    D_gs_MHz: Option<f64>,
    gamma_e_MHz_per_G: Option<f64>,
    transverse_divisor: Option<f64>,
    quadrupole: Option<bool>,
    #[serde(default)]
    nucleus: Vec<NucleusRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub bz: f64,
    #[serde(default)]
    pub bx: f64,
    #[serde(default)]
    pub by: f64,
}

impl FieldConfig {
    pub fn along_z(bz: f64) -> Self {
        FieldConfig { bz, bx: 0.0, by: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.bz.is_finite() && self.bx.is_finite() && self.by.is_finite()
    }
}

/// Which algebraic route builds the hyperfine operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyperfineForm {
    /// `Azz SzIz + Axx SxIx + Ayy SyIy + Axy (SxIy + SyIx)`.
    Cartesian,
    /// `Azz SzIz + (A1 S+I- + h.c.) + (A2 S+I+ + h.c.)`.
    Ladder,
}

/// Hyperfine coupling of nucleus `j` (0-based among nuclei).
pub fn hyperfine_operator(
    spins: &EmbeddedSpins,
    j: usize,
    t: &HyperfineTensor,
    form: HyperfineForm,
) -> Operator {
    let s = spins.electron();
    let i = spins.nucleus(j);
    let secular = (&s.sz * &i.sz).scale(t.azz);
    match form {
        HyperfineForm::Cartesian => {
            let xx = (&s.sx * &i.sx).scale(t.axx);
            let yy = (&s.sy * &i.sy).scale(t.ayy);
            let xy = (&(&s.sx * &i.sy) + &(&s.sy * &i.sx)).scale(t.axy);
            &(&(&secular + &xx) + &yy) + &xy
        }
        HyperfineForm::Ladder => {
            let lc = ladder_coefficients(t);
            let flip_flop = (&s.splus * &i.sminus).scale(lc.a1);
            let flip_flip = (&s.splus * &i.splus).scale_complex(lc.a2);
            let ff = &flip_flop + &flip_flop.adjoint();
            let fp = &flip_flip + &flip_flip.adjoint();
            &(&secular + &ff) + &fp
        }
    }
}

/// Assembles the full Hamiltonian on `model.register()` (electron first).
pub fn build_hamiltonian(model: &DefectModel, field: &FieldConfig) -> Result<Operator> {
    build_hamiltonian_with(model, field, HyperfineForm::Cartesian)
}

pub fn build_hamiltonian_with(
    model: &DefectModel,
    field: &FieldConfig,
    form: HyperfineForm,
) -> Result<Operator> {
    model.validate()?;
    if !field.is_finite() {
        return Err(Error::invalid("field components must be finite"));
    }
    let register = model.register();
    let spins = EmbeddedSpins::new(&register)?;
    let s = spins.electron();

    let mut h = (&s.sz * &s.sz).scale(model.d_gs);
    h = &h + &s.sz.scale(model.gamma_e * field.bz);
    if field.bx != 0.0 {
        h = &h + &s.sx.scale(model.gamma_e * field.bx);
    }
    if field.by != 0.0 {
        h = &h + &s.sy.scale(model.gamma_e * field.by);
    }
    for (j, nucleus) in model.nuclei.iter().enumerate() {
        let g = nucleus.species.gamma()?;
        let i = spins.nucleus(j);
        h = &h - &i.sz.scale(g * field.bz);
        if field.bx != 0.0 {
            h = &h - &i.sx.scale(g * field.bx);
        }
        if field.by != 0.0 {
            h = &h - &i.sy.scale(g * field.by);
        }
        h = &h + &hyperfine_operator(&spins, j, &nucleus.tensor, form);
    }
    h.into_hermitian()
        .map_err(|e| Error::Internal(format!("assembled Hamiltonian failed the Hermitian check: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::CMatrix;
    use nalgebra::SymmetricEigen;

    fn n15() -> IsotopeSpecies {
        IsotopeRegistry::bundled().get("15N").unwrap().clone()
    }

    fn n14() -> IsotopeSpecies {
        IsotopeRegistry::bundled().get("14N").unwrap().clone()
    }

    fn eigenvalues(op: &Operator) -> Vec<f64> {
        let m: CMatrix = op.matrix().clone();
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    #[test]
    fn bare_spin_zero_field() {
        let h = build_hamiltonian(&DefectModel::bare(), &FieldConfig::along_z(0.0)).unwrap();
        let ev = eigenvalues(&h);
        assert!((ev[0]).abs() < 1e-9);
        assert!((ev[1] - 3480.0).abs() < 1e-9);
        assert!((ev[2] - 3480.0).abs() < 1e-9);
    }

    #[test]
    fn bare_spin_zeeman_splitting() {
        let h = build_hamiltonian(&DefectModel::bare(), &FieldConfig::along_z(100.0)).unwrap();
        let ev = eigenvalues(&h);
        assert!((ev[2] - ev[1] - 560.0).abs() < 1e-9);
    }

    #[test]
    fn ground_state_crossing_field() {
        let bz = D_GS / GAMMA_E;
        assert!((bz - 1242.857142857).abs() < 1e-6);
        let h = build_hamiltonian(&DefectModel::bare(), &FieldConfig::along_z(bz)).unwrap();
        let ev = eigenvalues(&h);
        assert!((ev[1] - ev[0]).abs() < 1e-9);
    }

    #[test]
    fn ladder_coefficients_examples() {
        let lc = ladder_coefficients(&HyperfineTensor::new(3.0, 3.0, 0.0, 1.0));
        assert!((lc.a1 - 1.5).abs() < 1e-15);
        assert_eq!(lc.a2, Complex64::new(0.0, 0.0));

        let lc = ladder_coefficients(&HyperfineTensor::new(4.0, 0.0, 2.0, 0.0));
        assert!((lc.a1 - 1.0).abs() < 1e-15);
        assert!((lc.a2 - Complex64::new(1.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn ladder_round_trip() {
        let t = HyperfineTensor::new(-12.5, 40.25, 7.125, -65.9);
        let back = tensor_from_ladder(&ladder_coefficients(&t), t.azz);
        assert!((back.axx - t.axx).abs() < 1e-12);
        assert!((back.ayy - t.ayy).abs() < 1e-12);
        assert!((back.axy - t.axy).abs() < 1e-12);
    }

    #[test]
    fn cartesian_and_ladder_forms_agree() {
        let species = n15();
        let tensors = [
            HyperfineTensor::new(-21.3, -9.7, 4.4, -65.9),
            HyperfineTensor::new(13.0, -2.0, -8.5, 48.3),
            HyperfineTensor::new(0.0, 0.0, 11.0, 0.0),
        ];
        let model = DefectModel::with_nuclei(
            tensors
                .iter()
                .map(|t| Nucleus {
                    species: species.clone(),
                    tensor: *t,
                })
                .collect(),
        );
        let field = FieldConfig { bz: 430.0, bx: 3.0, by: -2.0 };
        let a = build_hamiltonian_with(&model, &field, HyperfineForm::Cartesian).unwrap();
        let b = build_hamiltonian_with(&model, &field, HyperfineForm::Ladder).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12 * a.max_abs());
    }

    #[test]
    fn rotation_examples() {
        let t = HyperfineTensor::new(-21.3, -9.7, 4.4, -65.9);
        assert_eq!(rotate_tensor(&t, 0.0), t);
        let mut r = t;
        for _ in 0..3 {
            r = rotate_tensor(&r, 2.0 * PI / 3.0);
        }
        assert!((r.axx - t.axx).abs() < 1e-12);
        assert!((r.ayy - t.ayy).abs() < 1e-12);
        assert!((r.axy - t.axy).abs() < 1e-12);
        assert_eq!(r.azz, t.azz);
    }

    #[test]
    fn rotation_matches_matrix_conjugation() {
        let t = HyperfineTensor::new(5.0, -3.0, 1.5, 2.0);
        let phi: f64 = 0.7;
        let (s, c) = phi.sin_cos();
        let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let expected = rot * t.to_matrix() * rot.transpose();
        let got = rotate_tensor(&t, phi).to_matrix();
        assert!((expected - got).abs().max() < 1e-12);
    }

    #[test]
    fn isotope_substitution_ratio() {
        let t14 = HyperfineTensor::secular(48.3);
        let t15 = isotope_substitute(&t14, &n14(), &n15()).unwrap();
        assert!((t15.azz - 48.3 * -1.4).abs() < 1e-9);
        assert!(((t15.azz - -65.9) / -65.9).abs() < 0.03);

        let same = isotope_substitute(&t14, &n14(), &n14()).unwrap();
        assert_eq!(same, t14);

        let t = HyperfineTensor::new(1.1, -2.2, 3.3, 4.4);
        let back = isotope_substitute(&isotope_substitute(&t, &n14(), &n15()).unwrap(), &n15(), &n14()).unwrap();
        assert!((back.axy - t.axy).abs() < 1e-12 && (back.azz - t.azz).abs() < 1e-12);

        let mut zero = n14();
        zero.gamma_n = Some(0.0);
        assert!(isotope_substitute(&t, &zero, &n15()).is_err());
    }

    #[test]
    fn transverse_rescale() {
        let t = HyperfineTensor::new(-60.0, -120.0, 10.0, -65.9);
        assert_eq!(rescale_transverse(&t, 1.0).unwrap(), t);
        let big = t.with_transverse_magnitude(142.0).unwrap();
        let small = rescale_transverse(&big, 4.8).unwrap();
        assert!((small.transverse_magnitude() - 142.0 / 4.8).abs() < 1e-12);
        assert!((small.transverse_magnitude() - 29.58).abs() < 0.01);
        assert_eq!(small.azz, t.azz);
        assert!(rescale_transverse(&t, 0.0).is_err());
        assert!(rescale_transverse(&t, -1.0).is_err());
    }

    #[test]
    fn guards() {
        let mut model = DefectModel::bare();
        model.quadrupole = true;
        assert!(build_hamiltonian(&model, &FieldConfig::along_z(0.0)).is_err());

        let species = n15();
        let model = DefectModel::with_nuclei(
            (0..7)
                .map(|_| Nucleus {
                    species: species.clone(),
                    tensor: HyperfineTensor::secular(1.0),
                })
                .collect(),
        );
        assert!(build_hamiltonian(&model, &FieldConfig::along_z(0.0)).is_err());
    }

    #[test]
    fn bundled_models_have_expected_magnitudes() {
        let reg = IsotopeRegistry::bundled();
        let m = DefectModel::bundled_default(&reg).unwrap();
        assert_eq!(m.nuclei.len(), 3);
        for n in &m.nuclei {
            assert!((n.tensor.azz + 65.9).abs() < 1e-12);
            assert!((n.tensor.transverse_magnitude() - 30.0).abs() < 1e-9);
        }
        let lc: Vec<_> = m.nuclei.iter().map(|n| ladder_coefficients(&n.tensor)).collect();
        for l in &lc[1..] {
            assert!((l.a1.abs() - lc[0].a1.abs()).abs() < 1e-12);
            assert!((l.a2.norm() - lc[0].a2.norm()).abs() < 1e-12);
        }
        let ab = DefectModel::bundled_ab_initio(&reg).unwrap();
        for n in &ab.nuclei {
            assert!((n.tensor.transverse_magnitude() - 142.0).abs() < 1e-9);
        }
    }
}
