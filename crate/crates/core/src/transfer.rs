//! Cross-task transfer estimation.
//!
//! Each task gets a single-task model (linear encoder + softmax classifier).
//! The transfer score from task `i` to task `j` is the validation accuracy on
//! `j` of a classifier fitted on `j`'s training set over `i`'s frozen encoder.
//! Only a sampled subset of task pairs is evaluated; the rest of the
//! transfer matrix stays unobserved.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{Example, TaskDataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io;
use crate::nn::{self, HeadData, Linear, TrainConfig};
use crate::seed::{self, stage};

/// Encoder + classifier trained on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub encoder: Linear,
    pub classifier: Linear,
}

impl TaskModel {
    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim
    }

    pub fn label_count(&self) -> usize {
        self.classifier.out_dim
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        nn::softmax(&self.classifier.forward(&self.encoder.forward(x)))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        nn::argmax(&self.classifier.forward(&self.encoder.forward(x)))
    }

    /// Fraction of correctly classified examples (0 for an empty slice).
    pub fn accuracy(&self, examples: &[Example]) -> f64 {
        accuracy_by(examples, |x| self.predict(x))
    }
}

pub(crate) fn accuracy_by(examples: &[Example], predict: impl Fn(&[f64]) -> usize) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let correct = examples.iter().filter(|e| predict(&e.x) == e.y).count();
    correct as f64 / examples.len() as f64
}

/// Trains a single-task model on `dataset.train`. Deterministic given `config.seed`.
pub fn train_single_task(dataset: &TaskDataset, config: &TrainConfig) -> Result<TaskModel> {
    if dataset.train().is_empty() {
        return Err(Error::EmptyTrain);
    }
    dataset.validate()?;
    let dim = dataset.dim().unwrap_or(0);
    let mut rng = seed::rng(config.seed);
    let (encoder, mut heads) = nn::train_encoder_heads(
        &[HeadData {
            examples: dataset.train(),
            label_count: dataset.label_count,
        }],
        dim,
        config,
        &mut rng,
    );
    Ok(TaskModel {
        encoder,
        classifier: heads.pop().expect("one head"),
    })
}

/// Transfer performance of `source` on `target`.
///
/// By default fits a fresh classifier on `target.train` over the frozen
/// source encoder and reports accuracy on `target.valid`. With
/// `config.identical_labels` the unmodified source model is scored on
/// `target.train` instead.
pub fn transfer_score(
    source: &TaskModel,
    target: &TaskDataset,
    config: &TrainConfig,
) -> Result<f64> {
    if let Some(dim) = target.dim() {
        if dim != source.input_dim() {
            return Err(Error::DimMismatch {
                expected: source.input_dim(),
                got: dim,
            });
        }
    }
    if target.train().is_empty() {
        return Err(Error::EmptyTrain);
    }
    if config.identical_labels {
        if target.label_count != source.label_count() {
            return Err(Error::LabelSpaceMismatch);
        }
        return Ok(source.accuracy(target.train()));
    }
    if target.valid().is_empty() {
        return Err(Error::EmptyValid);
    }
    let encode = |examples: &[Example]| -> Vec<(Vec<f64>, usize)> {
        examples
            .iter()
            .map(|e| (source.encoder.forward(&e.x), e.y))
            .collect()
    };
    let train = encode(target.train());
    let mut rng = seed::rng(config.seed);
    let classifier = nn::train_classifier(
        &train,
        source.encoder.out_dim,
        target.label_count,
        config.transfer_epochs,
        config,
        &mut rng,
    );
    let valid = encode(target.valid());
    let correct = valid
        .iter()
        .filter(|(z, y)| nn::argmax(&classifier.forward(z)) == *y)
        .count();
    Ok(correct as f64 / valid.len() as f64)
}

/// Number of unordered pairs `{i, j}`, `i != j`, among `n` tasks.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps a linear index in `0..pair_count(n)` to the pair `(i, j)`, `i < j`,
/// enumerating row by row.
fn pair_from_index(n: usize, t: usize) -> (usize, usize) {
    // rows before i hold offset(i) = i*(2n-i-1)/2 pairs
    let offset = |i: usize| i * (2 * n - i - 1) / 2;
    let (mut lo, mut hi) = (0, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if offset(mid) <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, lo + 1 + t - offset(lo))
}

/// Samples `budget` distinct unordered task pairs uniformly without
/// replacement. The result is sorted; identical seeds give identical sets.
pub fn sample_task_pairs(n: usize, budget: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let available = pair_count(n);
    if budget > available {
        return Err(Error::BudgetTooLarge { budget, available });
    }
    let mut rng = seed::rng(seed);
    let mut pairs: Vec<(usize, usize)> = index::sample(&mut rng, available, budget)
        .into_iter()
        .map(|t| pair_from_index(n, t))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Partially observed asymmetric matrix of transfer scores. The diagonal is
/// observed with value 1 and the observed mask is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    n: usize,
    scores: Vec<f64>,
    observed: Vec<bool>,
}

impl TransferMatrix {
    /// Only the diagonal observed.
    pub fn new(n: usize) -> Self {
        let mut m = TransferMatrix {
            n,
            scores: vec![0.0; n * n],
            observed: vec![false; n * n],
        };
        for i in 0..n {
            m.scores[i * n + i] = 1.0;
            m.observed[i * n + i] = true;
        }
        m
    }

    /// Builds a matrix from dense scores; `None` marks an unobserved entry.
    /// The diagonal is forced to 1.
    pub fn from_entries(n: usize, entries: &[Option<f64>]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        let mut m = TransferMatrix::new(n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let a = entries[i * n + j];
                let b = entries[j * n + i];
                if a.is_some() != b.is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({i},{j}) observed in one direction only"
                    )));
                }
                if let Some(v) = a {
                    m.set(i, j, v)?;
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.n + j;
        self.observed[k].then_some(self.scores[k])
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.n + j]
    }

    /// Observes one directed off-diagonal score. Callers must also set the
    /// mirrored entry to keep the mask symmetric; see [`set_pair`](Self::set_pair).
    fn set(&mut self, i: usize, j: usize, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidArgument(format!(
                "score {score} at ({i},{j}) outside [0,1]"
            )));
        }
        let k = i * self.n + j;
        self.scores[k] = score;
        self.observed[k] = true;
        Ok(())
    }

    /// Observes both directions of a pair: `s_ij` for `(i,j)` and `s_ji` for `(j,i)`.
    pub fn set_pair(&mut self, i: usize, j: usize, s_ij: f64, s_ji: f64) -> Result<()> {
        if i == j || i >= self.n || j >= self.n {
            return Err(Error::InvalidArgument(format!("invalid pair ({i},{j})")));
        }
        self.set(i, j, s_ij)?;
        self.set(j, i, s_ji)
    }

    /// Count of observed entries including the diagonal.
    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Observed off-diagonal pairs `(i, j)` with `i < j`.
    pub fn observed_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.is_observed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// CSV: `#n=<int>` header then `i,j,score` for each observed off-diagonal entry.
    pub fn to_csv(&self) -> String {
        let mut out = io::header(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    if let Some(v) = self.get(i, j) {
                        writeln!(out, "{i},{j},{v}").unwrap();
                    }
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        const CTX: &str = "transfer matrix";
        let n = io::parse_header(text.lines().next(), CTX)?;
        let mut entries = vec![None; n * n];
        for line in io::data_lines(text) {
            let (i, j, v) = io::parse_triple(line, n, CTX)?;
            if i == j {
                continue;
            }
            entries[i * n + j] = Some(v);
        }
        TransferMatrix::from_entries(n, &entries).map_err(|e| Error::parse(CTX, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write(path, &self.to_csv())
    }

    pub fn load(path: &Path) -> Result<Self> {
        TransferMatrix::from_csv(&io::read(path)?)
    }
}

fn task_seed(config: &TrainConfig, i: usize) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(config.seed, &[stage::TRAIN, i as u64]),
        ..*config
    }
}

fn pair_seed(config: &TrainConfig, i: usize, j: usize) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(config.seed, &[stage::TRANSFER, i as u64, j as u64]),
        ..*config
    }
}

/// Trains one single-task model per task, each with a seed derived from
/// `config.seed` and the task index.
pub fn train_all(
    tasks: &[TaskDataset],
    config: &TrainConfig,
    exec: Execution,
) -> Result<Vec<TaskModel>> {
    exec.map_range(tasks.len(), |i| {
        train_single_task(&tasks[i], &task_seed(config, i))
    })
    .into_iter()
    .collect()
}

/// Degenerate targets are skipped rather than failing the whole matrix.
fn is_degenerate_target(e: &Error) -> bool {
    matches!(e, Error::EmptyTrain | Error::EmptyValid)
}

/// Evaluates both directions of every pair with already trained models.
pub fn score_pairs(
    models: &[TaskModel],
    tasks: &[TaskDataset],
    pairs: &[(usize, usize)],
    config: &TrainConfig,
    exec: Execution,
) -> Result<TransferMatrix> {
    let n = tasks.len();
    if models.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} models for {n} tasks",
            models.len()
        )));
    }
    for &(i, j) in pairs {
        if i == j || i >= n || j >= n {
            return Err(Error::InvalidArgument(format!("invalid pair ({i},{j})")));
        }
    }
    let results = exec.map_slice(pairs, |&(i, j)| {
        let forward = transfer_score(&models[i], &tasks[j], &pair_seed(config, i, j));
        let backward = transfer_score(&models[j], &tasks[i], &pair_seed(config, j, i));
        (forward, backward)
    });
    let mut matrix = TransferMatrix::new(n);
    for (&(i, j), (forward, backward)) in pairs.iter().zip(results) {
        match (forward, backward) {
            (Ok(s_ij), Ok(s_ji)) => matrix.set_pair(i, j, s_ij, s_ji)?,
            (Err(e), _) | (_, Err(e)) if is_degenerate_target(&e) => {
                log::warn!("pair ({i},{j}) left unobserved: {e}");
            }
            (Err(e), _) | (_, Err(e)) => {
                return Err(Error::Pair {
                    i,
                    j,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(matrix)
}

/// Trains every task's model, then scores the sampled pairs in both directions.
pub fn build_transfer_matrix(
    tasks: &[TaskDataset],
    pairs: &[(usize, usize)],
    config: &TrainConfig,
    exec: Execution,
) -> Result<TransferMatrix> {
    let models = train_all(tasks, config, exec)?;
    score_pairs(&models, tasks, pairs, config, exec)
}
