//! Score filtering: turns the asymmetric transfer matrix into a symmetric,
//! partially observed binary similarity matrix using per-column dynamic
//! thresholds.
//!
//! A pair is similar (1) when both directed scores are strictly above
//! `mean + p1 * std` of their target columns, dissimilar (0) when both are
//! strictly below `mean - p2 * std`, and unobserved otherwise. The `xl`
//! variant observes every sampled pair: 1 if either directed score reaches
//! its column mean, 0 otherwise.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::transfer::TransferMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    #[default]
    Standard,
    Xl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub p1: f64,
    pub p2: f64,
    pub mode: FilterMode,
    /// Count the diagonal `S_jj = 1` in column statistics.
    pub include_diagonal_in_stats: bool,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            p1: 0.5,
            p2: 0.5,
            mode: FilterMode::Standard,
            include_diagonal_in_stats: true,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p1 >= 0.0 && self.p2 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "p1 and p2 must be nonnegative, got {} and {}",
                self.p1, self.p2
            )));
        }
        Ok(())
    }
}

/// Mean and population standard deviation of the observed entries of column `j`.
pub fn column_stats(s: &TransferMatrix, j: usize, include_diagonal: bool) -> Result<(f64, f64)> {
    let values: Vec<f64> = (0..s.n())
        .filter(|&i| include_diagonal || i != j)
        .filter_map(|i| s.get(i, j))
        .collect();
    if values.len() < 2 {
        return Err(Error::DegenerateColumn {
            column: j,
            observed: values.len(),
        });
    }
    let len = values.len() as f64;
    let mean = values.iter().sum::<f64>() / len;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len;
    Ok((mean, var.sqrt()))
}

/// Symmetric matrix over `{1, 0, unobserved}` with the diagonal fixed to 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialSimilarityMatrix {
    n: usize,
    values: Vec<Option<bool>>,
}

impl PartialSimilarityMatrix {
    pub fn new(n: usize) -> Self {
        let mut values = vec![None; n * n];
        for i in 0..n {
            values[i * n + i] = Some(true);
        }
        PartialSimilarityMatrix { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<bool> {
        self.values[i * self.n + j]
    }

    /// Sets both `(i,j)` and `(j,i)`. Diagonal entries stay 1.
    pub fn set(&mut self, i: usize, j: usize, value: Option<bool>) {
        if i == j {
            return;
        }
        self.values[i * self.n + j] = value;
        self.values[j * self.n + i] = value;
    }

    /// Observed off-diagonal entries, both orientations counted.
    pub fn observed_off_diagonal(&self) -> usize {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j).is_some())
            .count()
    }

    /// Dense `Y` (observed values, 0 elsewhere) and the observation mask.
    pub fn to_dense(&self) -> (DMatrix<f64>, DMatrix<bool>) {
        let y = DMatrix::from_fn(self.n, self.n, |i, j| match self.get(i, j) {
            Some(true) => 1.0,
            _ => 0.0,
        });
        let mask = DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j).is_some());
        (y, mask)
    }

    /// CSV: `#n=<int>` header then `i,j,v` for observed entries with `i < j`.
    pub fn to_csv(&self) -> String {
        let mut out = io::header(self.n);
        for i in 0..self.n {
            for j in i + 1..self.n {
                if let Some(v) = self.get(i, j) {
                    writeln!(out, "{i},{j},{}", u8::from(v)).unwrap();
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        const CTX: &str = "partial similarity matrix";
        let n = io::parse_header(text.lines().next(), CTX)?;
        let mut m = PartialSimilarityMatrix::new(n);
        for line in io::data_lines(text) {
            let (i, j, v) = io::parse_triple(line, n, CTX)?;
            let v = match v {
                0.0 => false,
                1.0 => true,
                _ => {
                    return Err(Error::parse(
                        CTX,
                        format!("value must be 0 or 1 in {line:?}"),
                    ))
                }
            };
            if i != j {
                m.set(i, j, Some(v));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write(path, &self.to_csv())
    }

    pub fn load(path: &Path) -> Result<Self> {
        PartialSimilarityMatrix::from_csv(&io::read(path)?)
    }
}

/// Applies the dynamic-threshold rule to every observed pair of `s`.
/// Statistics are needed only for columns touched by an observed pair.
pub fn filter(s: &TransferMatrix, params: &FilterParams) -> Result<PartialSimilarityMatrix> {
    params.validate()?;
    let n = s.n();
    let mut stats: Vec<Option<(f64, f64)>> = vec![None; n];
    let mut stat = |j: usize| -> Result<(f64, f64)> {
        if let Some(st) = stats[j] {
            return Ok(st);
        }
        let st = column_stats(s, j, params.include_diagonal_in_stats)?;
        stats[j] = Some(st);
        Ok(st)
    };
    let mut y = PartialSimilarityMatrix::new(n);
    for (i, j) in s.observed_pairs() {
        let s_ij = s.get(i, j).expect("observed");
        let s_ji = s.get(j, i).expect("mask is symmetric");
        let (mu_j, sd_j) = stat(j)?;
        let (mu_i, sd_i) = stat(i)?;
        let value = match params.mode {
            FilterMode::Standard => {
                if s_ij > mu_j + params.p1 * sd_j && s_ji > mu_i + params.p1 * sd_i {
                    Some(true)
                } else if s_ij < mu_j - params.p2 * sd_j && s_ji < mu_i - params.p2 * sd_i {
                    Some(false)
                } else {
                    None
                }
            }
            FilterMode::Xl => Some(s_ij >= mu_j || s_ji >= mu_i),
        };
        y.set(i, j, value);
    }
    Ok(y)
}
