//! Shared pieces of the CSV file formats: the `#n=<int>` header and dense
//! matrix dumps.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn header(n: usize) -> String {
    format!("#n={n}\n")
}

/// Parses the `#n=<int>` header line.
pub fn parse_header(line: Option<&str>, context: &str) -> Result<usize> {
    let line = line.ok_or_else(|| Error::parse(context, "missing #n= header"))?;
    line.trim()
        .strip_prefix("#n=")
        .ok_or_else(|| Error::parse(context, "first line must be #n=<int>"))?
        .parse()
        .map_err(|e| Error::parse(context, e))
}

/// Splits a data line into exactly three comma-separated fields `i,j,v`.
pub fn parse_triple(line: &str, n: usize, context: &str) -> Result<(usize, usize, f64)> {
    let mut parts = line.trim().split(',');
    let mut next = || {
        parts
            .next()
            .map(str::trim)
            .ok_or_else(|| Error::parse(context, format!("expected i,j,v in {line:?}")))
    };
    let i: usize = next()?.parse().map_err(|e| Error::parse(context, e))?;
    let j: usize = next()?.parse().map_err(|e| Error::parse(context, e))?;
    let v: f64 = next()?.parse().map_err(|e| Error::parse(context, e))?;
    if parts.next().is_some() {
        return Err(Error::parse(
            context,
            format!("too many fields in {line:?}"),
        ));
    }
    if i >= n || j >= n {
        return Err(Error::parse(
            context,
            format!("index out of range in {line:?}"),
        ));
    }
    Ok((i, j, v))
}

/// Data lines of a CSV file, skipping blank lines and `#` comments after the header.
pub fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

pub fn dense_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{}", m[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn dense_from_csv(text: &str, context: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::parse(context, e))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::parse(context, "ragged rows"));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|_| Error::MissingInput(path.display().to_string()))
}
