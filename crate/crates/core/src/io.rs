//! Matrix files and JSON helpers.
//!
//! Data matrices are headerless CSV, one row per line, values written with
//! 17 significant digits so that parsing reproduces every bit.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pc::{PcFit, SIGN_CONVENTION};

/// Serde adapter storing a matrix as row-major nested arrays.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        super::from_rows(&rows).map_err(D::Error::custom)
    }
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse("rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Full-precision decimal representation (17 significant digits).
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 24);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&x| format_f64(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: cannot parse {field:?}", lineno + 1)))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse(format!("line {}: non-finite value", lineno + 1)))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix file".into()));
    }
    from_rows(&rows)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_csv(&read_text(path)?)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &matrix_to_csv(m))
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

/// Reads a single-column (or single-row) numeric file as a vector.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(DVector::from_iterator(m.len(), m.iter().copied()))
    } else {
        Err(Error::Parse(format!("{} is {}x{}, expected a vector", path.display(), m.nrows(), m.ncols())))
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Err(Error::Parse(format!("{} is empty", path.display())));
    }
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub r: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub sign_convention: String,
    pub lambda_hat: Vec<f64>,
}

/// Writes `F_hat.csv`, `B_hat.csv`, `lambda_hat.csv`, `residuals.csv` and
/// `manifest.json` into `dir`.
pub fn export_fit(dir: &Path, fit: &PcFit) -> Result<FitManifest> {
    ensure_dir(dir)?;
    write_matrix(&dir.join("F_hat.csv"), &fit.f_hat)?;
    write_matrix(&dir.join("B_hat.csv"), &fit.b_hat)?;
    write_vector(&dir.join("lambda_hat.csv"), &fit.lambda_hat)?;
    write_matrix(&dir.join("residuals.csv"), &fit.e_hat)?;
    let manifest = FitManifest {
        r: fit.r,
        t: fit.t(),
        n: fit.n(),
        sign_convention: SIGN_CONVENTION.to_string(),
        lambda_hat: fit.lambda_hat.iter().copied().collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_roundtrip_is_bitwise(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..60), cols in 1usize..6) {
            let rows = values.len().div_ceil(cols);
            let m = DMatrix::from_fn(rows, cols, |i, j| values.get(i * cols + j).copied().unwrap_or(0.0));
            let back = parse_matrix_csv(&matrix_to_csv(&m)).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.iter().zip(m.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_ragged_and_non_numeric() {
        assert!(parse_matrix_csv("1,2\n3\n").is_err());
        assert!(parse_matrix_csv("1,x\n").is_err());
        assert!(parse_matrix_csv("1,nan\n").is_err());
        assert!(parse_matrix_csv("\n").is_err());
    }

    #[test]
    fn json_rows_roundtrip() {
        #[derive(Serialize, Deserialize)]
        struct Wrap {
            #[serde(with = "matrix_rows")]
            m: DMatrix<f64>,
        }
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 0.1]);
        let json = serde_json::to_string(&Wrap { m: m.clone() }).unwrap();
        assert_eq!(json, r#"{"m":[[1.0,2.0,3.0],[4.0,5.0,0.1]]}"#);
        let back: Wrap = serde_json::from_str(&json).unwrap();
        assert_eq!(back.m, m);
    }
}
