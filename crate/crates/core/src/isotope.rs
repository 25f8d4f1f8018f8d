//! Nuclear isotope species and the registry file that defines them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::spin::SpinQuantum;

/// Marker left in data files for values that must be supplied by the user.
pub const REQUIRED_USER_INPUT: &str = "REQUIRED-USER-INPUT";

const ABUNDANCE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsotopeSpecies {
    pub name: String,
    pub element: String,
    pub spin: SpinQuantum,
    /// Signed gyromagnetic ratio in MHz/G; `None` until supplied by the user.
    pub gamma_n: Option<f64>,
    pub natural_abundance: f64,
}

impl IsotopeSpecies {
    pub fn new(name: &str, element: &str, spin: SpinQuantum, gamma_n: f64, abundance: f64) -> Self {
        IsotopeSpecies {
            name: name.to_string(),
            element: element.to_string(),
            spin,
            gamma_n: Some(gamma_n),
            natural_abundance: abundance,
        }
    }

    /// The gyromagnetic ratio, or a field-level error naming the isotope.
    pub fn gamma(&self) -> Result<f64> {
        self.gamma_n.ok_or_else(|| {
            Error::validation(
                format!("isotope {}", self.name),
                "gamma_n_MHz_per_G",
                format!("{REQUIRED_USER_INPUT}: gyromagnetic ratio not populated"),
            )
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GammaField {
    Value(f64),
    Marker(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IsotopeRecord {
    name: String,
    element: String,
    #[serde(rename = "two_I")]
    two_i: u32,
    #[serde(rename = "gamma_n_MHz_per_G")]
    gamma_n: GammaField,
    abundance: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[allow(dead_code)]
    format_version: u32,
    isotope: Vec<IsotopeRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsotopeRegistry {
    isotopes: Vec<IsotopeSpecies>,
}

impl IsotopeRegistry {
    pub fn from_species(isotopes: Vec<IsotopeSpecies>) -> Result<Self> {
        let reg = IsotopeRegistry { isotopes };
        reg.validate_structure("registry")?;
        Ok(reg)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let file: RegistryFile = format::parse_toml(text, origin)?;
        let mut isotopes = Vec::with_capacity(file.isotope.len());
        for rec in file.isotope {
            let record = format!("{origin}: isotope {}", rec.name);
            let spin = SpinQuantum::new(rec.two_i)
                .map_err(|e| Error::validation(&record, "two_I", e.to_string()))?;
            let gamma_n = match rec.gamma_n {
                GammaField::Value(g) if g.is_finite() => Some(g),
                GammaField::Value(g) => {
                    return Err(Error::validation(&record, "gamma_n_MHz_per_G", format!("non-finite value {g}")))
                }
                GammaField::Marker(m) if m == REQUIRED_USER_INPUT => None,
                GammaField::Marker(m) => {
                    return Err(Error::validation(
                        &record,
                        "gamma_n_MHz_per_G",
                        format!("expected a number or \"{REQUIRED_USER_INPUT}\", found \"{m}\""),
                    ))
                }
            };
            isotopes.push(IsotopeSpecies {
                name: rec.name,
                element: rec.element,
                spin,
                gamma_n,
                natural_abundance: rec.abundance,
            });
        }
        let reg = IsotopeRegistry { isotopes };
        reg.validate_structure(origin)?;
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = format::read_text(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The registry shipped with the crate (boron ratios unpopulated).
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/isotopes.toml"), "bundle:isotopes.toml")
            .expect("bundled isotope registry is valid")
    }

    pub fn isotopes(&self) -> &[IsotopeSpecies] {
        &self.isotopes
    }

    pub fn get(&self, name: &str) -> Result<&IsotopeSpecies> {
        self.isotopes
            .iter()
            .find(|iso| iso.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown isotope `{name}`")))
    }

    /// Returns a copy with one isotope's gyromagnetic ratio set.
    pub fn with_gamma(&self, name: &str, gamma_n: f64) -> Result<Self> {
        let mut out = self.clone();
        let iso = out
            .isotopes
            .iter_mut()
            .find(|iso| iso.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown isotope `{name}`")))?;
        iso.gamma_n = Some(gamma_n);
        Ok(out)
    }

    /// Full validation: every field populated. Used by the `validate` scenario.
    pub fn validate_complete(&self) -> Result<()> {
        for iso in &self.isotopes {
            iso.gamma()?;
        }
        Ok(())
    }

    fn validate_structure(&self, origin: &str) -> Result<()> {
        let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
        for (k, iso) in self.isotopes.iter().enumerate() {
            let record = format!("{origin}: isotope {}", iso.name);
            if self.isotopes[..k].iter().any(|o| o.name == iso.name) {
                return Err(Error::validation(&record, "name", "duplicate isotope name"));
            }
            if !(0.0..=1.0).contains(&iso.natural_abundance) {
                return Err(Error::validation(&record, "abundance", "must lie in [0, 1]"));
            }
            *sums.entry(iso.element.as_str()).or_default() += iso.natural_abundance;
        }
        for (element, sum) in sums {
            if (sum - 1.0).abs() > ABUNDANCE_TOL {
                return Err(Error::validation(
                    format!("{origin}: element {element}"),
                    "abundance",
                    format!("abundances sum to {sum}, expected 1"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::GAMMA_E;

    #[test]
    fn bundled_registry_nitrogen_ratios() {
        let reg = IsotopeRegistry::bundled();
        let n15 = reg.get("15N").unwrap().gamma().unwrap();
        let n14 = reg.get("14N").unwrap().gamma().unwrap();
        assert!((GAMMA_E / n15.abs() - 6487.0).abs() < 1e-9);
        assert!((n15 / n14 + 1.4).abs() < 1e-12);
        assert_eq!(reg.get("10B").unwrap().spin.two_i(), 6);
        assert_eq!(reg.get("11B").unwrap().spin.two_i(), 3);
    }

    #[test]
    fn boron_gamma_is_a_field_level_error() {
        let reg = IsotopeRegistry::bundled();
        let err = reg.validate_complete().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gamma_n_MHz_per_G"), "{msg}");
        assert!(msg.contains("10B"), "{msg}");
        let filled = reg
            .with_gamma("10B", 4.575e-4)
            .unwrap()
            .with_gamma("11B", 1.366e-3)
            .unwrap();
        filled.validate_complete().unwrap();
    }

    #[test]
    fn abundance_sum_is_checked() {
        let text = r#"
format_version = 1
[[isotope]]
name = "14N"
element = "N"
two_I = 2
gamma_n_MHz_per_G = 3e-4
abundance = 0.9
"#;
        let err = IsotopeRegistry::parse(text, "t").unwrap_err();
        assert!(err.to_string().contains("abundance"));
    }

    #[test]
    fn bad_marker_is_rejected() {
        let text = r#"
format_version = 1
[[isotope]]
name = "X"
element = "X"
two_I = 1
gamma_n_MHz_per_G = "TBD"
abundance = 1.0
"#;
        assert!(IsotopeRegistry::parse(text, "t").is_err());
    }
}
