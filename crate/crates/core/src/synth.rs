//! Planted-cluster benchmarks for the completion step.
//!
//! A planted instance is the block similarity matrix `X* = sum_i a_i a_i^T`
//! of a known partition, which has rank exactly `k`. Observations sample
//! `m1` entries uniformly, `m2` of which are flipped; a trial counts as a
//! recovery when the solver output matches `X*` entrywise to `1e-3`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::completion::{self, CompletionProblem, SolverConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed::{self, stage};
use crate::transfer::{self, TransferMatrix};

/// Entrywise tolerance for declaring a recovery.
pub const RECOVERY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedInstance {
    pub n: usize,
    pub k: usize,
    pub sizes: Vec<usize>,
    pub x_star: DMatrix<f64>,
    pub membership: Vec<usize>,
}

/// `k` cluster sizes differing by at most one.
pub fn equal_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|c| n / k + usize::from(c < n % k)).collect()
}

/// Builds the block matrix of a partition with the given cluster sizes.
/// Items are assigned to clusters in a seeded random order.
pub fn generate_planted(n: usize, k: usize, sizes: &[usize], seed: u64) -> Result<PlantedInstance> {
    if sizes.len() != k || sizes.contains(&0) || sizes.iter().sum::<usize>() != n {
        return Err(Error::BadSizes {
            n,
            k,
            sizes: sizes.to_vec(),
        });
    }
    let mut membership: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
        .collect();
    membership.shuffle(&mut seed::rng(seed::derive(seed, &[stage::SYNTH])));
    Ok(PlantedInstance {
        n,
        k,
        sizes: sizes.to_vec(),
        x_star: similarity_from_membership(&membership),
        membership,
    })
}

/// `X_ij = 1` iff items `i` and `j` share a cluster.
pub fn similarity_from_membership(membership: &[usize]) -> DMatrix<f64> {
    let n = membership.len();
    DMatrix::from_fn(n, n, |i, j| {
        f64::from(u8::from(membership[i] == membership[j]))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Off-diagonal entries are observed and corrupted in mirrored pairs,
    /// each pair counting 2 toward the budget.
    #[default]
    PairAware,
    /// Independent uniform positions, as in the recovery theorem.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPlan {
    pub m1: usize,
    pub m2: usize,
    pub observed: Vec<(usize, usize)>,
    pub corrupted: Vec<(usize, usize)>,
    /// Observed values (with corruption), 0 elsewhere.
    pub y: DMatrix<f64>,
    pub mask: DMatrix<bool>,
}

impl ObservationPlan {
    pub fn problem(&self) -> Result<CompletionProblem> {
        CompletionProblem::new(self.y.clone(), self.mask.clone())
    }
}

/// A diagonal position or a mirrored off-diagonal pair.
#[derive(Debug, Clone, Copy)]
enum Slot {
    Diag(usize),
    Pair(usize, usize),
}

impl Slot {
    fn weight(self) -> usize {
        match self {
            Slot::Diag(_) => 1,
            Slot::Pair(..) => 2,
        }
    }

    fn positions(self) -> Vec<(usize, usize)> {
        match self {
            Slot::Diag(i) => vec![(i, i)],
            Slot::Pair(i, j) => vec![(i, j), (j, i)],
        }
    }
}

/// Walks `slots` in order, taking each one that still fits, until exactly
/// `budget` positions are covered.
fn take_slots(slots: &[Slot], budget: usize) -> Result<Vec<Slot>> {
    let mut remaining = budget;
    let mut taken = Vec::new();
    for &s in slots {
        if remaining == 0 {
            break;
        }
        if s.weight() <= remaining {
            remaining -= s.weight();
            taken.push(s);
        }
    }
    if remaining > 0 {
        return Err(Error::InfeasibleBudget(format!(
            "{budget} positions requested but only an even count is reachable without further diagonal slots"
        )));
    }
    Ok(taken)
}

/// Samples `m1` observed positions uniformly and flips `m2` of them.
pub fn observe_and_corrupt(
    inst: &PlantedInstance,
    m1: usize,
    m2: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<ObservationPlan> {
    let n = inst.n;
    if m1 > n * n || m2 > m1 {
        return Err(Error::InfeasibleBudget(format!(
            "need m2 <= m1 <= n^2, got m1 = {m1}, m2 = {m2}, n = {n}"
        )));
    }
    let mut rng = seed::rng(seed::derive(seed, &[stage::OBSERVE]));
    let (observed, corrupted) = match mode {
        SamplingMode::Uniform => {
            let picks: Vec<(usize, usize)> = index::sample(&mut rng, n * n, m1)
                .into_iter()
                .map(|t| (t / n, t % n))
                .collect();
            let flips = index::sample(&mut rng, m1, m2)
                .into_iter()
                .map(|t| picks[t])
                .collect();
            (picks, flips)
        }
        SamplingMode::PairAware => {
            let mut slots: Vec<Slot> = (0..n).map(Slot::Diag).collect();
            for i in 0..n {
                for j in i + 1..n {
                    slots.push(Slot::Pair(i, j));
                }
            }
            slots.shuffle(&mut rng);
            let mut chosen = take_slots(&slots, m1)?;
            let observed = chosen.iter().flat_map(|s| s.positions()).collect();
            chosen.shuffle(&mut rng);
            let flips = take_slots(&chosen, m2)?
                .into_iter()
                .flat_map(|s| s.positions())
                .collect();
            (observed, flips)
        }
    };
    let mut mask = DMatrix::from_element(n, n, false);
    let mut y = DMatrix::zeros(n, n);
    for &(i, j) in &observed {
        mask[(i, j)] = true;
        y[(i, j)] = inst.x_star[(i, j)];
    }
    for &(i, j) in &corrupted {
        y[(i, j)] = 1.0 - inst.x_star[(i, j)];
    }
    Ok(ObservationPlan {
        m1,
        m2,
        observed,
        corrupted,
        y,
        mask,
    })
}

/// Computable incoherence proxies of the planted matrix's singular subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceDiagnostics {
    /// `sqrt(n/k) * max_i max(||P_U e_i||, ||P_V e_i||)`
    pub mu0: f64,
    /// `max |(U V^T)_ij|`
    pub uv_max: f64,
    /// `uv_max * n / sqrt(k)`
    pub mu1: f64,
}

pub fn coherence(inst: &PlantedInstance) -> Result<CoherenceDiagnostics> {
    let n = inst.n;
    let k = inst.k;
    // X* is symmetric positive semidefinite, so U = V = its leading eigenvectors
    let eig = SymmetricEigen::try_new(inst.x_star.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::NonFinite)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let u_k = DMatrix::from_fn(n, k, |i, c| eig.eigenvectors[(i, order[c])]);
    let row_max = |m: &DMatrix<f64>| m.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let scale = (n as f64 / k as f64).sqrt();
    let mu0 = scale * row_max(&u_k);
    let uv_max = (&u_k * u_k.transpose()).amax();
    Ok(CoherenceDiagnostics {
        mu0,
        uv_max,
        mu1: uv_max * n as f64 / (k as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub recovered: bool,
    pub max_abs_err: f64,
    pub iterations: usize,
    /// Set when the solver failed.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialConfig {
    pub mode: SamplingMode,
    /// `None` uses `1/sqrt(n)`.
    pub lambda: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            mode: SamplingMode::PairAware,
            lambda: None,
            solver: SolverConfig::default(),
        }
    }
}

/// Observe, corrupt, complete, and compare to the planted matrix.
pub fn recovery_trial(
    inst: &PlantedInstance,
    m1: usize,
    m2: usize,
    config: &TrialConfig,
    seed: u64,
) -> Result<TrialOutcome> {
    let plan = observe_and_corrupt(inst, m1, m2, config.mode, seed)?;
    let mut problem = plan.problem()?;
    if let Some(l) = config.lambda {
        problem = problem.with_lambda(l)?;
    }
    Ok(match completion::complete(&problem, &config.solver) {
        Ok(result) => {
            let err = (&result.x - &inst.x_star).amax();
            TrialOutcome {
                recovered: err < RECOVERY_TOL,
                max_abs_err: err,
                iterations: result.iterations,
                reason: None,
            }
        }
        Err(e) => TrialOutcome {
            recovered: false,
            max_abs_err: f64::INFINITY,
            iterations: 0,
            reason: Some(e.to_string()),
        },
    })
}

/// One cell of a phase sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub k: usize,
    pub m1: usize,
    pub m2: usize,
    pub trials: usize,
    pub recovered_count: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub n: usize,
    pub k: usize,
    /// Observed fractions of the `n^2` entries.
    pub m1_fractions: Vec<f64>,
    /// Corrupted fractions of the observed entries.
    pub m2_fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub trial: TrialConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: &f64| (0.0..=1.0).contains(f);
        if self.m1_fractions.is_empty() || self.m2_fractions.is_empty() {
            return Err(Error::InvalidArgument("sweep grid is empty".into()));
        }
        if !self.m1_fractions.iter().all(frac_ok) || !self.m2_fractions.iter().all(frac_ok) {
            return Err(Error::InvalidArgument(
                "grid fractions must lie in [0, 1]".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::BadSizes {
                n: self.n,
                k: self.k,
                sizes: vec![],
            });
        }
        Ok(())
    }

    /// `(m1, m2)` for every grid cell, row-major over (m2 fraction, m1 fraction).
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let total = (self.n * self.n) as f64;
        let mut out = Vec::new();
        for &f2 in &self.m2_fractions {
            for &f1 in &self.m1_fractions {
                let m1 = (f1 * total).round() as usize;
                let m2 = (f2 * m1 as f64).round() as usize;
                out.push((m1, m2));
            }
        }
        out
    }
}

/// Instance and observation seeds of one trial, derived from the master seed.
fn trial_seed(master: u64, cell: usize, trial: usize) -> u64 {
    seed::derive(master, &[stage::SWEEP, cell as u64, trial as u64])
}

fn run_trial(spec: &SweepSpec, m1: usize, m2: usize, seed: u64) -> bool {
    let sizes = equal_sizes(spec.n, spec.k);
    let outcome = generate_planted(spec.n, spec.k, &sizes, seed)
        .and_then(|inst| recovery_trial(&inst, m1, m2, &spec.trial, seed));
    match outcome {
        Ok(o) => o.recovered,
        Err(e) => {
            log::warn!("trial m1={m1} m2={m2} failed: {e}");
            false
        }
    }
}

/// Empirical recovery probability on every grid cell. Each trial draws a
/// fresh planted instance with equal cluster sizes.
pub fn phase_sweep(spec: &SweepSpec, exec: Execution) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let cells = spec.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let results = exec.map_slice(&jobs, |&(c, t)| {
        let (m1, m2) = cells[c];
        run_trial(spec, m1, m2, trial_seed(spec.seed, c, t))
    });
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &(m1, m2))| {
            let recovered_count = results[c * spec.trials..(c + 1) * spec.trials]
                .iter()
                .filter(|&&r| r)
                .count();
            SweepRow {
                n: spec.n,
                k: spec.k,
                m1,
                m2,
                trials: spec.trials,
                recovered_count,
                prob: recovered_count as f64 / spec.trials as f64,
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n,k,m1,m2,trials,recovered_count,prob\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n, r.k, r.m1, r.m2, r.trials, r.recovered_count, r.prob
        )
        .unwrap();
    }
    out
}

/// Smallest `m1` of an ascending grid (with `m2 = 0`) whose recovery rate
/// reaches `target`; `None` if no grid value does.
pub fn sampling_threshold(
    n: usize,
    k: usize,
    m1_grid: &[usize],
    trials: usize,
    target: f64,
    trial: &TrialConfig,
    seed: u64,
    exec: Execution,
) -> Option<usize> {
    let spec = SweepSpec {
        n,
        k,
        m1_fractions: vec![1.0],
        m2_fractions: vec![0.0],
        trials,
        seed,
        trial: *trial,
    };
    m1_grid.iter().copied().enumerate().find_map(|(c, m1)| {
        let wins = exec
            .map_range(trials, |t| run_trial(&spec, m1, 0, trial_seed(seed, c, t)))
            .into_iter()
            .filter(|&r| r)
            .count();
        (wins as f64 / trials as f64 >= target).then_some(m1)
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let len = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / len;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / len;
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Transfer matrix with planted structure: sampled pairs score
/// `within +- noise` inside a cluster and `cross +- noise` across clusters
/// (uniform noise, clamped to `[0, 1]`).
pub fn planted_transfer_matrix(
    membership: &[usize],
    within: f64,
    cross: f64,
    noise: f64,
    pair_fraction: f64,
    seed: u64,
) -> Result<TransferMatrix> {
    let n = membership.len();
    let budget = (pair_fraction * transfer::pair_count(n) as f64).round() as usize;
    let pairs = transfer::sample_task_pairs(n, budget, seed::derive(seed, &[stage::PAIRS]))?;
    let mut rng = seed::rng(seed::derive(seed, &[stage::SYNTH, 1]));
    let mut draw = |same: bool| {
        let base = if same { within } else { cross };
        (base + rng.random_range(-noise..=noise)).clamp(0.0, 1.0)
    };
    let mut s = TransferMatrix::new(n);
    for (i, j) in pairs {
        let same = membership[i] == membership[j];
        let (a, b) = (draw(same), draw(same));
        s.set_pair(i, j, a, b)?;
    }
    Ok(s)
}
