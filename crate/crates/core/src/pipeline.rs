//! End-to-end task clustering: transfer estimation, score filtering,
//! matrix completion and spectral clustering.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::completion::{self, CompletionProblem, CompletionResult, SolverConfig};
use crate::data::TaskDataset;
use crate::error::Result;
use crate::exec::Execution;
use crate::filter::{self, FilterParams, PartialSimilarityMatrix};
use crate::nn::TrainConfig;
use crate::seed::{self, stage};
use crate::spectral::{self, SpectralConfig, TaskPartition};
use crate::transfer::{self, TransferMatrix};

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub partial: PartialSimilarityMatrix,
    pub completion: CompletionResult,
    /// Recovered similarities clipped to `[0, 1]`.
    pub affinity: DMatrix<f64>,
    pub clipped_fraction: f64,
    pub partition: TaskPartition,
}

/// Filter, complete and cluster an already estimated transfer matrix.
pub fn cluster_from_scores(
    scores: &TransferMatrix,
    k: usize,
    filter_params: &FilterParams,
    solver: &SolverConfig,
    seed: u64,
    exec: Execution,
) -> Result<ClusterOutcome> {
    if k == 0 {
        return Err(crate::Error::BadK);
    }
    let partial = filter::filter(scores, filter_params)?;
    let problem = CompletionProblem::from_partial(&partial)?;
    let completion = completion::complete(&problem, solver)?;
    let (affinity, clipped_fraction) = completion::clip_unit(&completion.x);
    let partition = spectral::spectral_cluster_with(
        &affinity,
        k,
        seed::derive(seed, &[stage::CLUSTER]),
        &SpectralConfig::default(),
        exec,
    )?;
    Ok(ClusterOutcome {
        partial,
        completion,
        affinity,
        clipped_fraction,
        partition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateParams {
    pub train: TrainConfig,
    /// Number of task pairs to evaluate; `None` evaluates all pairs.
    pub pair_budget: Option<usize>,
    pub seed: u64,
}

/// Samples task pairs and estimates their transfer scores.
pub fn estimate(
    tasks: &[TaskDataset],
    params: &EstimateParams,
    exec: Execution,
) -> Result<TransferMatrix> {
    let n = tasks.len();
    let budget = params
        .pair_budget
        .unwrap_or_else(|| transfer::pair_count(n));
    let pairs = transfer::sample_task_pairs(n, budget, seed::derive(params.seed, &[stage::PAIRS]))?;
    let train = TrainConfig {
        seed: seed::derive(params.seed, &[stage::TRAIN]),
        ..params.train
    };
    transfer::build_transfer_matrix(tasks, &pairs, &train, exec)
}

/// Full clustering pipeline from raw task datasets.
pub fn robust_task_clustering(
    tasks: &[TaskDataset],
    k: usize,
    estimate_params: &EstimateParams,
    filter_params: &FilterParams,
    solver: &SolverConfig,
    exec: Execution,
) -> Result<(TransferMatrix, ClusterOutcome)> {
    let scores = estimate(tasks, estimate_params, exec)?;
    let outcome = cluster_from_scores(
        &scores,
        k,
        filter_params,
        solver,
        estimate_params.seed,
        exec,
    )?;
    Ok((scores, outcome))
}
