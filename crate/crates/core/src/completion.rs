//! Robust low-rank matrix completion.
//!
//! Solves
//!
//! ```text
//! min ||X||_* + lambda * ||E||_1   s.t.   P_Omega(X + E) = P_Omega(Y)
//! ```
//!
//! with an inexact augmented Lagrangian iteration: singular value
//! thresholding for `X`, soft thresholding for `E` on the observed set, and
//! exact residual absorption by `E` off the observed set (unobserved entries
//! carry no constraint). The penalty grows geometrically up to a cap.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::PartialSimilarityMatrix;

/// Observed matrix, observation mask and l1 weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionProblem {
    y: DMatrix<f64>,
    mask: DMatrix<bool>,
    lambda: f64,
}

impl CompletionProblem {
    /// `lambda` defaults to `1/sqrt(n)`. Values of `y` outside the mask are ignored.
    pub fn new(y: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        let n = y.nrows();
        if y.ncols() != n || mask.shape() != y.shape() {
            return Err(Error::InvalidArgument(format!(
                "expected square matrices of one shape, got {:?} and {:?}",
                y.shape(),
                mask.shape()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument("completion needs n >= 2".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("no observed entries".into()));
        }
        if y.zip_map(&mask, |v, m| !m || v.is_finite())
            .iter()
            .any(|ok| !ok)
        {
            return Err(Error::NonFinite);
        }
        let y = y.zip_map(&mask, |v, m| if m { v } else { 0.0 });
        Ok(CompletionProblem {
            y,
            mask,
            lambda: 1.0 / (n as f64).sqrt(),
        })
    }

    pub fn from_partial(partial: &PartialSimilarityMatrix) -> Result<Self> {
        let (y, mask) = partial.to_dense();
        CompletionProblem::new(y, mask)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    /// `P_Omega(Y)`.
    pub fn observed(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `||X||_* + lambda * ||P_Omega(E)||_1`
    pub fn objective(&self, x: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<f64> {
        let l1: f64 = e
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.abs())
            .sum();
        Ok(nuclear_norm(x)? + self.lambda * l1)
    }

    /// `||P_Omega(Y - X - E)||_F / max(1, ||P_Omega(Y)||_F)`
    pub fn residual(&self, x: &DMatrix<f64>, e: &DMatrix<f64>) -> f64 {
        let mut num = 0.0;
        for k in 0..self.y.len() {
            if self.mask[k] {
                num += (self.y[k] - x[k] - e[k]).powi(2);
            }
        }
        num.sqrt() / self.y.norm().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Initial penalty; `None` uses `1 / ||P_Omega(Y)||_2` (spectral norm).
    pub rho0: Option<f64>,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub lambda_override: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho0: None,
            rho_growth: 1.2,
            rho_max: 1e7,
            tol: 1e-7,
            max_iter: 500,
            lambda_override: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.rho_growth >= 1.0) {
            return bad(format!("rho_growth must be >= 1, got {}", self.rho_growth));
        }
        if let Some(r) = self.rho0 {
            if !(r > 0.0) {
                return bad(format!("rho0 must be positive, got {r}"));
            }
        }
        if let Some(l) = self.lambda_override {
            if !(l > 0.0) {
                return bad(format!("lambda must be positive, got {l}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    /// Recovered matrix; symmetric by construction.
    pub x: DMatrix<f64>,
    /// Sparse error, zero outside the observed set.
    pub e: DMatrix<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub lambda: f64,
}

/// Record written next to the recovered matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub lambda: f64,
    pub clipped_fraction: f64,
}

impl CompletionResult {
    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            iterations: self.iterations,
            final_residual: self.final_residual,
            converged: self.converged,
            lambda: self.lambda,
            clipped_fraction: clip_unit(&self.x).1,
        }
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    check_finite(m)?;
    Ok(m.singular_values().sum())
}

/// Singular value thresholding: `U max(S - tau, 0) V^T`, the proximal
/// operator of `tau * ||.||_*`.
///
/// Computed from the eigendecomposition of `[[0, M], [M^T, 0]]`, whose
/// positive eigenpairs are `(sigma, (u, v) / sqrt(2))`. nalgebra's SVD
/// returns wrong singular vectors for some rank-deficient inputs (e.g. the
/// 5x5 all-ones matrix), while its symmetric eigensolver is reliable.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    check_finite(m)?;
    let (rows, cols) = m.shape();
    let mut block = DMatrix::zeros(rows + cols, rows + cols);
    block.view_mut((0, rows), (rows, cols)).copy_from(m);
    block
        .view_mut((rows, 0), (cols, rows))
        .copy_from(&m.transpose());
    let eig = SymmetricEigen::try_new(block, f64::EPSILON, 10_000).ok_or(Error::NonFinite)?;
    let mut out = DMatrix::zeros(rows, cols);
    for (k, &sigma) in eig.eigenvalues.iter().enumerate() {
        let shrunk = sigma - tau;
        if shrunk > 0.0 {
            let w = eig.eigenvectors.column(k);
            out.ger(2.0 * shrunk, &w.rows(0, rows), &w.rows(rows, cols), 1.0);
        }
    }
    Ok(out)
}

/// Singular value thresholding of a symmetric matrix through its
/// eigendecomposition: `Q sign(L) max(|L| - tau, 0) Q^T`. Agrees with [`svt`]
/// on symmetric input and returns an exactly symmetric matrix.
pub fn svt_symmetric(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    check_finite(m)?;
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::NonFinite)?;
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let shrunk = l.abs() - tau;
        if shrunk > 0.0 {
            let q = eig.eigenvectors.column(k);
            out.ger(shrunk * l.signum(), &q, &q, 1.0);
        }
    }
    // rank-1 updates round asymmetrically in the last bit
    Ok((&out + out.transpose()) * 0.5)
}

/// Elementwise `sign(m) * max(|m| - tau, 0)`.
pub fn soft_threshold(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    m.map(|v| shrink(v, tau))
}

fn shrink(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Clips to `[0, 1]`; returns the clipped matrix and the fraction of
/// entries that were outside the interval.
pub fn clip_unit(x: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let outside = x.iter().filter(|&&v| !(0.0..=1.0).contains(&v)).count();
    (
        x.map(|v| v.clamp(0.0, 1.0)),
        outside as f64 / x.len().max(1) as f64,
    )
}

/// Ratio between primal and dual residuals that triggers a penalty change.
const BALANCE: f64 = 10.0;

/// Runs the augmented Lagrangian iteration until both the relative observed
/// residual drops below `config.tol` and the dual residual below its square
/// root, or `config.max_iter` is reached. The penalty is multiplied or
/// divided by `rho_growth` to keep the two residuals within a factor of ten.
pub fn complete(problem: &CompletionProblem, config: &SolverConfig) -> Result<CompletionResult> {
    config.validate()?;
    let n = problem.n();
    let lambda = config.lambda_override.unwrap_or(problem.lambda);
    let y = &problem.y;
    let mask = &problem.mask;
    let symmetric = y == &y.transpose() && mask == &mask.transpose();
    let spectral = if symmetric {
        SymmetricEigen::try_new(y.clone(), f64::EPSILON, 10_000)
            .ok_or(Error::NonFinite)?
            .eigenvalues
            .amax()
    } else {
        y.singular_values().max()
    };
    let mut rho = config
        .rho0
        .unwrap_or(if spectral > 0.0 { 1.0 / spectral } else { 1.0 });
    let y_norm = y.norm().max(1.0);

    let mut x = DMatrix::zeros(n, n);
    let mut e = DMatrix::zeros(n, n);
    let mut dual = DMatrix::zeros(n, n);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut dual_residual;
    let mut converged = false;

    while iterations < config.max_iter {
        iterations += 1;
        let inv_rho = 1.0 / rho;
        // X is kept symmetric: over symmetric matrices the proximal step of
        // the nuclear norm is SVT of the symmetrized argument, which an
        // eigendecomposition computes directly
        let arg = y - &e + &dual * inv_rho;
        x = svt_symmetric(&((&arg + arg.transpose()) * 0.5), inv_rho).map_err(|_| {
            Error::Diverged {
                iteration: iterations,
            }
        })?;
        let target = y - &x + &dual * inv_rho;
        let tau = lambda * inv_rho;
        let e_next = target.zip_map(mask, |t, m| if m { shrink(t, tau) } else { t });
        dual_residual = (&e_next - &e).norm() * rho / y_norm;
        e = e_next;
        let r = y - &x - &e;
        let mut r_norm = 0.0;
        for k in 0..r.len() {
            if mask[k] {
                r_norm += r[k] * r[k];
            }
        }
        residual = r_norm.sqrt() / y_norm;
        if !residual.is_finite() {
            return Err(Error::Diverged {
                iteration: iterations,
            });
        }
        dual += r * rho;
        if residual < config.tol && dual_residual < config.tol.sqrt() {
            converged = true;
            break;
        }
        // residual balancing: a penalty that only grows freezes E before
        // the nuclear-norm part has settled, well above the optimum
        if residual > BALANCE * dual_residual {
            rho = (rho * config.rho_growth).min(config.rho_max);
        } else if dual_residual > BALANCE * residual {
            rho /= config.rho_growth;
        }
    }
    log::debug!("completion: {iterations} iterations, residual {residual:e}");

    let e = e.zip_map(mask, |v, m| if m { v } else { 0.0 });
    let final_residual = problem.residual(&x, &e);
    Ok(CompletionResult {
        x,
        e,
        iterations,
        final_residual,
        converged,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_svt_matches_svd_route() {
        let a = DMatrix::from_fn(7, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let m = &a + a.transpose();
        let via_eig = svt_symmetric(&m, 0.4).unwrap();
        assert!((&via_eig - svt(&m, 0.4).unwrap()).amax() < 1e-10);
        assert_eq!(via_eig, via_eig.transpose());
    }

    #[test]
    fn svt_on_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.2]));
        let out = svt(&m, 0.5).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.5, 0.5, 0.0]));
        assert!((out - expected).abs().max() < 1e-12);
    }

    #[test]
    fn svt_of_zero_is_zero() {
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(svt(&z, 0.7).unwrap(), z);
    }

    #[test]
    fn svt_rejects_bad_inputs() {
        let mut m = DMatrix::<f64>::identity(2, 2);
        assert_eq!(svt(&m, 0.0).unwrap_err().code(), "invalid-argument");
        m[(0, 1)] = f64::NAN;
        assert_eq!(svt(&m, 0.5).unwrap_err().code(), "non-finite");
    }

    #[test]
    fn soft_threshold_examples() {
        let m = DMatrix::from_row_slice(1, 2, &[0.9, -0.2]);
        let out = soft_threshold(&m, 0.5);
        assert!((out[(0, 0)] - 0.4).abs() < 1e-15);
        assert_eq!(out[(0, 1)], 0.0);
        let m = DMatrix::from_row_slice(1, 3, &[0.9, -0.2, 3.0]);
        assert_eq!(soft_threshold(&m, 0.0), m);
    }

    #[test]
    fn clip_reports_fraction() {
        let x = DMatrix::from_row_slice(2, 2, &[1.2, 0.5, -0.1, 1.0]);
        let (c, f) = clip_unit(&x);
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]));
        assert!((f - 0.5).abs() < 1e-15);
    }

    #[test]
    fn problem_validation() {
        let y = DMatrix::<f64>::zeros(3, 3);
        let none = DMatrix::from_element(3, 3, false);
        assert!(CompletionProblem::new(y.clone(), none).is_err());
        let all = DMatrix::from_element(3, 3, true);
        let p = CompletionProblem::new(y, all).unwrap();
        assert!((p.lambda() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!(p.with_lambda(-1.0).is_err());
        let small = CompletionProblem::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, true));
        assert!(small.is_err());
    }

    #[test]
    fn all_ones_is_recovered_exactly() {
        let n = 6;
        let y = DMatrix::from_element(n, n, 1.0);
        let p = CompletionProblem::new(y.clone(), DMatrix::from_element(n, n, true)).unwrap();
        let r = complete(&p, &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!((&r.x - &y).abs().max() < 1e-4);
        assert!(r.e.abs().max() < 1e-4);
    }

    #[test]
    fn config_validation() {
        let p = CompletionProblem::new(DMatrix::identity(2, 2), DMatrix::from_element(2, 2, true))
            .unwrap();
        for bad in [
            SolverConfig {
                tol: 0.0,
                ..Default::default()
            },
            SolverConfig {
                max_iter: 0,
                ..Default::default()
            },
            SolverConfig {
                rho_growth: 0.5,
                ..Default::default()
            },
        ] {
            assert!(complete(&p, &bad).is_err());
        }
    }
}
