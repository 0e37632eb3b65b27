//! Normalized spectral clustering (symmetric Laplacian, row-normalized
//! embedding, k-means++ with restarts).

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed::{self, stage};

/// Assignment of `n` items to `k` clusters, labels in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPartition {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl TaskPartition {
    /// Member indices of every cluster.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.assignment.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "assignment has {} entries for n = {}",
                self.assignment.len(),
                self.n
            )));
        }
        if let Some(&c) = self.assignment.iter().find(|&&c| c >= self.k) {
            return Err(Error::InvalidArgument(format!(
                "cluster id {c} >= K = {}",
                self.k
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read(path)?;
        let p: TaskPartition =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Self-loop weight added to every node so that all degrees are positive.
    pub self_loop: f64,
    /// Allowed `max |X_ij - X_ji|`, relative to `max(1, max |X|)`.
    pub symmetry_tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            restarts: 20,
            max_iter: 300,
            tol: 1e-9,
            self_loop: 1e-8,
            symmetry_tol: 1e-8,
        }
    }
}

/// The `k` eigenpairs of the smallest eigenvalues of
/// `L = I - D^{-1/2} W D^{-1/2}`, `W = X + eps I`.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    pub laplacian: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// `n x k`, columns are eigenvectors.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralEmbedding {
    /// Rows of the eigenvector matrix scaled to unit length.
    pub fn normalized_rows(&self) -> Vec<Vec<f64>> {
        self.eigenvectors
            .row_iter()
            .map(|r| {
                let norm = r.norm();
                r.iter()
                    .map(|v| if norm > 0.0 { v / norm } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

fn validate_affinity(x: &DMatrix<f64>, k: usize, tol: f64) -> Result<()> {
    let n = x.nrows();
    if x.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "affinity must be square, got {:?}",
            x.shape()
        )));
    }
    if k == 0 {
        return Err(Error::BadK);
    }
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scale = x.amax().max(1.0);
    let mut deviation: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if x[(i, j)] < 0.0 {
                return Err(Error::NegativeAffinity { i, j });
            }
            deviation = deviation.max((x[(i, j)] - x[(j, i)]).abs());
        }
    }
    if deviation > tol * scale {
        return Err(Error::AsymmetricInput { deviation });
    }
    Ok(())
}

pub fn spectral_embedding(x: &DMatrix<f64>, k: usize, self_loop: f64) -> Result<SpectralEmbedding> {
    let n = x.nrows();
    // symmetrize exactly; callers have already checked the deviation
    let w = (x + x.transpose()) * 0.5 + DMatrix::identity(n, n) * self_loop;
    let inv_sqrt: Vec<f64> = w.row_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    let laplacian = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - inv_sqrt[i] * w[(i, j)] * inv_sqrt[j]
    });
    let eig =
        SymmetricEigen::try_new(laplacian.clone(), f64::EPSILON, 10_000).ok_or(Error::NonFinite)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let chosen = &order[..k];
    let eigenvectors = DMatrix::from_fn(n, k, |i, c| eig.eigenvectors[(i, chosen[c])]);
    Ok(SpectralEmbedding {
        laplacian,
        eigenvalues: chosen.iter().map(|&c| eig.eigenvalues[c]).collect(),
        eigenvectors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut seed::Rng) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyCluster {
                cluster: centers.len(),
            });
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // guard against rounding landing on an already chosen point
        if d2[pick] <= 0.0 {
            pick = d2
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("nonempty");
        }
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().expect("pushed")));
        }
    }
    Ok(centers)
}

fn lloyd(
    points: &[Vec<f64>],
    mut centers: Vec<Vec<f64>>,
    config: &SpectralConfig,
) -> Result<KMeansResult> {
    let k = centers.len();
    let dim = points[0].len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..config.max_iter {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&x, &y| sq_dist(p, &centers[x]).total_cmp(&sq_dist(p, &centers[y])))
                .expect("k >= 1");
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // move the point farthest from its center into the empty cluster
                let (far, dist) = points
                    .iter()
                    .zip(&assignment)
                    .map(|(p, &a)| sq_dist(p, &centers[a]))
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("nonempty");
                if dist <= 0.0 || counts[assignment[far]] <= 1 {
                    return Err(Error::EmptyCluster { cluster: c });
                }
                let old = assignment[far];
                counts[old] -= 1;
                for (s, v) in sums[old].iter_mut().zip(&points[far]) {
                    *s -= v;
                }
                assignment[far] = c;
                counts[c] = 1;
                sums[c] = points[far].clone();
                changed = true;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, &centers[c]));
            centers[c] = new;
        }
        if !changed || shift < config.tol * config.tol {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum();
    Ok(KMeansResult {
        assignment,
        inertia,
    })
}

/// Relabels clusters in order of first appearance.
fn canonical_labels(assignment: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    assignment
        .iter()
        .map(|&a| {
            let next = map.len();
            *map.entry(a).or_insert(next)
        })
        .collect()
}

/// k-means++ with `config.restarts` restarts; the lowest inertia wins, ties
/// go to the earliest restart.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    config: &SpectralConfig,
    exec: Execution,
) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::BadK);
    }
    if k > points.len() {
        return Err(Error::TooManyClusters { k, n: points.len() });
    }
    let runs = exec.map_range(config.restarts.max(1), |r| {
        let mut rng = seed::rng(seed::derive(seed, &[stage::CLUSTER, r as u64]));
        kmeans_pp_init(points, k, &mut rng).and_then(|c| lloyd(points, c, config))
    });
    let mut best: Option<KMeansResult> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(mut b) => {
            b.assignment = canonical_labels(&b.assignment);
            Ok(b)
        }
        None => Err(first_err.expect("at least one restart")),
    }
}

pub fn spectral_cluster(x: &DMatrix<f64>, k: usize, seed: u64) -> Result<TaskPartition> {
    spectral_cluster_with(x, k, seed, &SpectralConfig::default(), Execution::default())
}

/// Partitions the items of a nonnegative symmetric affinity matrix into `k` clusters.
pub fn spectral_cluster_with(
    x: &DMatrix<f64>,
    k: usize,
    seed: u64,
    config: &SpectralConfig,
    exec: Execution,
) -> Result<TaskPartition> {
    validate_affinity(x, k, config.symmetry_tol)?;
    let n = x.nrows();
    let assignment = if k == 1 {
        vec![0; n]
    } else {
        let embedding = spectral_embedding(x, k, config.self_loop)?;
        kmeans(&embedding.normalized_rows(), k, seed, config, exec)?.assignment
    };
    Ok(TaskPartition {
        n,
        k,
        assignment,
        seed,
    })
}

fn choose2(x: usize) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand Index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let expected = rows * cols / choose2(n).max(1.0);
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        return if index == max { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}
