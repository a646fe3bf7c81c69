//! Matrix and vector import/export. Matrices are read from CSV (one row per
//! line) or JSON (array of rows); the format follows the file extension.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::matrix_from_rows;

/// Parses comma-separated rows. Blank lines and lines starting with `#` are skipped.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: cannot parse {:?}: {e}", lineno + 1, field.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    matrix_from_rows(&rows)
}

pub fn parse_matrix_json(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
    matrix_from_rows(&rows)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let is_csv = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_matrix_csv(&text)
    } else {
        parse_matrix_json(&text)
    }
}

pub fn write_matrix_csv<W: Write>(a: &DMatrix<f64>, mut out: W) -> Result<()> {
    for row in a.row_iter() {
        let fields: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// One `index,value` line per entry, under an `index,value` header.
pub fn write_vector_csv<W: Write>(v: &DVector<f64>, mut out: W) -> Result<()> {
    writeln!(out, "index,value")?;
    for (i, x) in v.iter().enumerate() {
        writeln!(out, "{i},{x}")?;
    }
    Ok(())
}
