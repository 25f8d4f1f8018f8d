//! Text formats: TOML data files, CSV array payloads, numeric serialization.
//!
//! Every structured file carries a `format_version` key; CSV files carry a
//! fixed header. Numbers are written in the shortest decimal form that parses
//! back to the identical `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Shortest round-trip decimal representation.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        // normalise -0.0 so repeated runs cannot differ by sign of zero
        return "0.0".to_string();
    }
    format!("{x:?}")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Parses TOML text and checks its `format_version`.
pub fn parse_toml<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let value: toml::Value = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    check_format_version(&value, origin)?;
    value.try_into().map_err(|e: toml::de::Error| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })
}

pub fn check_format_version(value: &toml::Value, origin: &str) -> Result<()> {
    match value.get("format_version") {
        Some(toml::Value::Integer(v)) if *v == i64::from(FORMAT_VERSION) => Ok(()),
        Some(other) => Err(Error::validation(
            origin,
            "format_version",
            format!("unsupported format_version {other}, expected {FORMAT_VERSION}"),
        )),
        None => Err(Error::validation(origin, "format_version", "missing key")),
    }
}

/// Writes a two-column CSV with the given header.
pub fn write_columns(path: &Path, header: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    let mut out = String::with_capacity(32 * xs.len() + 32);
    out.push_str(header[0]);
    out.push(',');
    out.push_str(header[1]);
    out.push('\n');
    for (x, y) in xs.iter().zip(ys) {
        out.push_str(&fmt_num(*x));
        out.push(',');
        out.push_str(&fmt_num(*y));
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a two-column CSV. `accepted` lists `(header, scale)` pairs for the
/// first column; the value is multiplied by the scale of whichever header is
/// present. Returns the columns and the matched first-column header.
pub fn read_columns(
    path: &Path,
    accepted: &[(&str, f64)],
    second: &str,
) -> Result<(Vec<f64>, Vec<f64>, String)> {
    let text = read_text(path)?;
    parse_columns(&text, &path.display().to_string(), accepted, second)
}

/// [`read_columns`] on CSV text; `origin` names the source in errors.
pub fn parse_columns(
    text: &str,
    origin: &str,
    accepted: &[(&str, f64)],
    second: &str,
) -> Result<(Vec<f64>, Vec<f64>, String)> {
    let origin = origin.to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: origin.clone(),
            message: e.to_string(),
        })?
        .clone();
    let (xcol, scale, xname) = accepted
        .iter()
        .find_map(|(name, scale)| {
            headers
                .iter()
                .position(|h| h == *name)
                .map(|i| (i, *scale, name.to_string()))
        })
        .ok_or_else(|| {
            let names: Vec<&str> = accepted.iter().map(|(n, _)| *n).collect();
            Error::validation(&origin, "header", format!("expected one of {names:?}"))
        })?;
    let ycol = headers
        .iter()
        .position(|h| h == second)
        .ok_or_else(|| Error::validation(&origin, "header", format!("missing column `{second}`")))?;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: origin.clone(),
            message: e.to_string(),
        })?;
        let parse = |col: usize| -> Result<f64> {
            let field = record.get(col).unwrap_or("");
            field.parse::<f64>().map_err(|_| Error::Parse {
                path: origin.clone(),
                message: format!("row {}: `{field}` is not a number", line + 2),
            })
        };
        xs.push(parse(xcol)? * scale);
        ys.push(parse(ycol)?);
    }
    Ok((xs, ys, xname))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("json serialization failed: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_is_normalised() {
        assert_eq!(fmt_num(-0.0), "0.0");
        assert_eq!(fmt_num(0.5), "0.5");
    }

    proptest! {
        #[test]
        fn numbers_round_trip_exactly(x in proptest::num::f64::NORMAL) {
            let back: f64 = fmt_num(x).parse().unwrap();
            prop_assert_eq!(back, x);
        }
    }

    #[test]
    fn csv_round_trip_with_time_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let xs = [0.0, 100.0, 250.5];
        let ys = [1.0, 0.5, 0.123456789012345];
        write_columns(&p, ["time_ns", "population"], &xs, &ys).unwrap();
        let (t, y, name) =
            read_columns(&p, &[("time_us", 1.0), ("time_ns", 1e-3)], "population").unwrap();
        assert_eq!(name, "time_ns");
        assert_eq!(y, ys.to_vec());
        assert!((t[2] - 0.2505).abs() < 1e-15);
    }

    #[test]
    fn missing_format_version_is_rejected() {
        #[derive(serde::Deserialize)]
        struct X {
            #[allow(dead_code)]
            a: i32,
        }
        let err = parse_toml::<X>("a = 1", "x.toml").err().unwrap();
        assert!(matches!(err, Error::Validation { .. }));
        assert!(parse_toml::<X>("format_version = 1\na = 1", "x.toml").is_ok());
    }
}
