//! Plain-text matrix and vector formats.
//!
//! A correlation matrix is a headerless CSV with one row per line; a
//! statistic vector is a single-column CSV. Blank lines are skipped.

use crate::error::{HarnessError, Result};
use nalgebra::DMatrix;
use pfa::linalg::CorrelationMatrix;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::Path;

fn parse_rows(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|e| HarnessError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("cannot parse {:?}: {e}", cell.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((i + 1, values));
    }
    Ok(rows)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let rows = parse_rows(path)?;
    let p = rows.len();
    if p == 0 {
        return Err(HarnessError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "empty matrix".into(),
        });
    }
    let mut m = DMatrix::zeros(p, p);
    for (r, (line, values)) in rows.iter().enumerate() {
        if values.len() != p {
            return Err(HarnessError::Parse {
                path: path.to_path_buf(),
                line: *line,
                message: format!("expected {p} columns, found {}", values.len()),
            });
        }
        for (c, v) in values.iter().enumerate() {
            m[(r, c)] = *v;
        }
    }
    Ok(m)
}

pub fn read_correlation(path: &Path) -> Result<CorrelationMatrix> {
    Ok(CorrelationMatrix::new(read_matrix(path)?)?)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    parse_rows(path)?
        .into_iter()
        .map(|(line, values)| {
            if values.len() == 1 {
                Ok(values[0])
            } else {
                Err(HarnessError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected one value, found {}", values.len()),
                })
            }
        })
        .collect()
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 20);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&m[(r, c)].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let out: String = v.iter().map(|x| format!("{x}\n")).collect();
    fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::io(path, e))?;
    text.push('\n');
    let mut file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}
