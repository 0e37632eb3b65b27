//! Learning on top of task clusters.
//!
//! Multi-task: one model per cluster with a shared encoder and a head per
//! task. Few-shot: a new task is predicted by a softmax-weighted mixture of
//! frozen cluster predictors, with the weights fitted on the support set.
//! Cluster predictors are either a shared classifier (identical label sets)
//! or a metric encoder scored against per-label support anchors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Example, TaskDataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::{self, HeadData, Linear, TrainConfig};
use crate::seed::{self, stage};
use crate::spectral::TaskPartition;
use crate::transfer::{self, accuracy_by, TaskModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SharedClassifier,
    SharedEncoderMultihead,
    MetricEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterParams {
    SharedClassifier {
        encoder: Linear,
        classifier: Linear,
    },
    SharedEncoderMultihead {
        encoder: Linear,
        task_ids: Vec<String>,
        heads: Vec<Linear>,
    },
    MetricEncoder {
        encoder: Linear,
    },
}

/// A model trained on all tasks of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub cluster_id: usize,
    pub params: ClusterParams,
}

impl ClusterModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            ClusterParams::SharedClassifier { .. } => ModelKind::SharedClassifier,
            ClusterParams::SharedEncoderMultihead { .. } => ModelKind::SharedEncoderMultihead,
            ClusterParams::MetricEncoder { .. } => ModelKind::MetricEncoder,
        }
    }

    pub fn encoder(&self) -> &Linear {
        match &self.params {
            ClusterParams::SharedClassifier { encoder, .. }
            | ClusterParams::SharedEncoderMultihead { encoder, .. }
            | ClusterParams::MetricEncoder { encoder } => encoder,
        }
    }

    /// Class probabilities from the task-specific head of a multi-head model.
    pub fn predict_task(&self, task_id: &str, x: &[f64]) -> Option<Vec<f64>> {
        match &self.params {
            ClusterParams::SharedEncoderMultihead {
                encoder,
                task_ids,
                heads,
            } => {
                let h = task_ids.iter().position(|t| t == task_id)?;
                Some(nn::softmax(&heads[h].forward(&encoder.forward(x))))
            }
            ClusterParams::SharedClassifier {
                encoder,
                classifier,
            } => Some(nn::softmax(&classifier.forward(&encoder.forward(x)))),
            ClusterParams::MetricEncoder { .. } => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
    }
}

fn common_dim(tasks: &[&TaskDataset]) -> Result<usize> {
    let mut dim = None;
    for t in tasks {
        t.validate()?;
        match (dim, t.dim()) {
            (None, d) => dim = d,
            (Some(a), Some(b)) if a != b => {
                return Err(Error::DimMismatch {
                    expected: a,
                    got: b,
                })
            }
            _ => {}
        }
    }
    dim.ok_or(Error::EmptyTrain)
}

/// Trains the model of one cluster; deterministic given `config.seed`.
pub fn train_cluster_model(
    cluster_id: usize,
    tasks: &[&TaskDataset],
    kind: ModelKind,
    config: &TrainConfig,
) -> Result<ClusterModel> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cluster {cluster_id} has no tasks"
        )));
    }
    if tasks.iter().all(|t| t.train().is_empty()) {
        return Err(Error::EmptyTrain);
    }
    let dim = common_dim(tasks)?;
    let mut rng = seed::rng(config.seed);
    let params = match kind {
        ModelKind::SharedClassifier => {
            let labels = tasks[0].label_count;
            if tasks.iter().any(|t| t.label_count != labels) {
                return Err(Error::LabelSpaceMismatch);
            }
            let pooled: Vec<Example> = tasks
                .iter()
                .flat_map(|t| t.train().iter().cloned())
                .collect();
            let (encoder, mut heads) = nn::train_encoder_heads(
                &[HeadData {
                    examples: &pooled,
                    label_count: labels,
                }],
                dim,
                config,
                &mut rng,
            );
            ClusterParams::SharedClassifier {
                encoder,
                classifier: heads.pop().expect("one head"),
            }
        }
        ModelKind::SharedEncoderMultihead => {
            let heads_data: Vec<HeadData<'_>> = tasks
                .iter()
                .map(|t| HeadData {
                    examples: t.train(),
                    label_count: t.label_count,
                })
                .collect();
            let (encoder, heads) = nn::train_encoder_heads(&heads_data, dim, config, &mut rng);
            ClusterParams::SharedEncoderMultihead {
                encoder,
                task_ids: tasks.iter().map(|t| t.task_id.clone()).collect(),
                heads,
            }
        }
        ModelKind::MetricEncoder => {
            let heads_data: Vec<HeadData<'_>> = tasks
                .iter()
                .map(|t| HeadData {
                    examples: t.train(),
                    label_count: t.label_count,
                })
                .collect();
            ClusterParams::MetricEncoder {
                encoder: nn::train_metric_encoder(&heads_data, dim, config, &mut rng),
            }
        }
    };
    Ok(ClusterModel { cluster_id, params })
}

/// Trains one model per cluster of `partition`, in parallel across clusters.
pub fn train_cluster_models(
    tasks: &[TaskDataset],
    partition: &TaskPartition,
    kind: ModelKind,
    config: &TrainConfig,
    exec: Execution,
) -> Result<Vec<ClusterModel>> {
    if partition.n != tasks.len() {
        return Err(Error::InvalidArgument(format!(
            "partition covers {} tasks, got {}",
            partition.n,
            tasks.len()
        )));
    }
    partition.validate()?;
    let clusters = partition.clusters();
    exec.map_range(clusters.len(), |c| {
        let members: Vec<&TaskDataset> = clusters[c].iter().map(|&i| &tasks[i]).collect();
        let cfg = TrainConfig {
            seed: seed::derive(config.seed, &[stage::LEARN, c as u64]),
            ..*config
        };
        train_cluster_model(c, &members, kind, &cfg)
    })
    .into_iter()
    .collect()
}

/// A few-shot target: labeled support examples covering every label, and a query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotTask {
    pub task_id: String,
    pub label_count: usize,
    pub support: Vec<Example>,
    pub query: Vec<Example>,
}

impl FewShotTask {
    pub fn new(
        task_id: impl Into<String>,
        label_count: usize,
        support: Vec<Example>,
        query: Vec<Example>,
    ) -> Result<Self> {
        let task = FewShotTask {
            task_id: task_id.into(),
            label_count,
            support,
            query,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.support.is_empty() {
            return Err(Error::NoSupport);
        }
        let mut seen = vec![false; self.label_count];
        for e in self.support.iter().chain(&self.query) {
            if e.y >= self.label_count {
                return Err(Error::LabelOutOfRange {
                    label: e.y,
                    label_count: self.label_count,
                });
            }
        }
        for e in &self.support {
            seen[e.y] = true;
        }
        if let Some(label) = seen.iter().position(|&s| !s) {
            return Err(Error::MissingSupportLabel { label });
        }
        Ok(())
    }

    /// Uses a dataset's training split as support and its test split as query.
    pub fn from_dataset(task: &TaskDataset) -> Result<Self> {
        FewShotTask::new(
            task.task_id.clone(),
            task.label_count,
            task.train().to_vec(),
            task.test().to_vec(),
        )
    }

    /// Support as the training split and query as the test split; this is
    /// what a single-task baseline trains on.
    pub fn as_dataset(&self) -> TaskDataset {
        TaskDataset::new(
            self.task_id.clone(),
            self.label_count,
            self.support.clone(),
            Vec::new(),
            self.query.clone(),
        )
    }
}

/// Per-label anchors: mean encoding of each label's support examples.
fn encoded_anchors(
    encoder: &Linear,
    support: &[Example],
    label_count: usize,
) -> Result<Vec<Vec<f64>>> {
    if support.is_empty() {
        return Err(Error::NoSupport);
    }
    if let Some(e) = support.iter().find(|e| e.x.len() != encoder.in_dim) {
        return Err(Error::DimMismatch {
            expected: encoder.in_dim,
            got: e.x.len(),
        });
    }
    let encoded: Vec<Example> = support
        .iter()
        .map(|e| Example::new(encoder.forward(&e.x), e.y))
        .collect();
    nn::class_means(&encoded, label_count, encoder.out_dim)
        .into_iter()
        .enumerate()
        .map(|(label, m)| m.ok_or(Error::MissingSupportLabel { label }))
        .collect()
}

fn anchor_proba(encoder: &Linear, anchors: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let e = encoder.forward(x);
    nn::softmax(&anchors.iter().map(|a| nn::dot(a, &e)).collect::<Vec<_>>())
}

/// `P(y = l | x) = softmax_l(<enc(anchor_l), enc(x)>)` where the anchor of
/// label `l` is the mean encoding of its support examples.
pub fn metric_predict(
    model: &ClusterModel,
    support: &[Example],
    label_count: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    let anchors = encoded_anchors(model.encoder(), support, label_count)?;
    Ok(anchor_proba(model.encoder(), &anchors, x))
}

/// One frozen cluster predictor specialised to a few-shot task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    Classifier {
        encoder: Linear,
        classifier: Linear,
    },
    Metric {
        encoder: Linear,
        anchors: Vec<Vec<f64>>,
    },
}

impl Component {
    /// `None` when the model cannot score the task's label space.
    pub fn for_task(model: &ClusterModel, task: &FewShotTask) -> Option<Component> {
        if task.support.first()?.x.len() != model.encoder().in_dim {
            return None;
        }
        match &model.params {
            ClusterParams::SharedClassifier {
                encoder,
                classifier,
            } => (classifier.out_dim == task.label_count).then(|| Component::Classifier {
                encoder: encoder.clone(),
                classifier: classifier.clone(),
            }),
            ClusterParams::MetricEncoder { encoder } => {
                encoded_anchors(encoder, &task.support, task.label_count)
                    .ok()
                    .map(|anchors| Component::Metric {
                        encoder: encoder.clone(),
                        anchors,
                    })
            }
            ClusterParams::SharedEncoderMultihead { .. } => None,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Component::Classifier {
                encoder,
                classifier,
            } => nn::softmax(&classifier.forward(&encoder.forward(x))),
            Component::Metric { encoder, anchors } => anchor_proba(encoder, anchors, x),
        }
    }

    pub fn accuracy(&self, examples: &[Example]) -> f64 {
        accuracy_by(examples, |x| nn::argmax(&self.predict_proba(x)))
    }
}

/// Mixture weights `alpha = softmax(logits)` over the compatible cluster models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationWeights {
    pub logits: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Index into the model list of each mixture component.
    pub model_indices: Vec<usize>,
}

/// `p(y | x) = sum_k alpha_k P(y | x; model_k)`
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePredictor {
    pub components: Vec<Component>,
    pub alpha: Vec<f64>,
}

impl MixturePredictor {
    pub fn new(components: Vec<Component>, alpha: Vec<f64>) -> Self {
        assert_eq!(components.len(), alpha.len());
        MixturePredictor { components, alpha }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for (c, &a) in self.components.iter().zip(&self.alpha) {
            let p = c.predict_proba(x);
            if out.is_empty() {
                out = vec![0.0; p.len()];
            }
            for (o, v) in out.iter_mut().zip(p) {
                *o += a * v;
            }
        }
        out
    }

    pub fn accuracy(&self, examples: &[Example]) -> f64 {
        accuracy_by(examples, |x| nn::argmax(&self.predict_proba(x)))
    }

    /// Mean negative log-likelihood of the examples' labels.
    pub fn cross_entropy(&self, examples: &[Example]) -> f64 {
        examples
            .iter()
            .map(|e| -self.predict_proba(&e.x)[e.y].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / examples.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombineConfig {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for CombineConfig {
    fn default() -> Self {
        CombineConfig {
            steps: 500,
            learning_rate: 0.1,
        }
    }
}

/// Fits the mixture weights by full-batch gradient descent on the support
/// cross-entropy, starting from uniform weights. Only the weights are trained.
pub fn fsl_combine(
    models: &[ClusterModel],
    task: &FewShotTask,
    config: &CombineConfig,
) -> Result<(CombinationWeights, MixturePredictor)> {
    task.validate()?;
    let (model_indices, components): (Vec<usize>, Vec<Component>) = models
        .iter()
        .enumerate()
        .filter_map(|(i, m)| Component::for_task(m, task).map(|c| (i, c)))
        .unzip();
    if components.is_empty() {
        return Err(Error::NoCompatibleCluster);
    }
    let k = components.len();
    // likelihood of the true label under each component, per support example
    let lik: Vec<Vec<f64>> = task
        .support
        .iter()
        .map(|e| {
            components
                .iter()
                .map(|c| c.predict_proba(&e.x)[e.y])
                .collect()
        })
        .collect();
    let s = lik.len() as f64;
    let mut logits = vec![0.0; k];
    for _ in 0..config.steps {
        let alpha = nn::softmax(&logits);
        // dL/dalpha_k = -(1/S) sum_s P_sk / p_s
        let mut g_alpha = vec![0.0; k];
        for row in &lik {
            let p: f64 = row
                .iter()
                .zip(&alpha)
                .map(|(l, a)| l * a)
                .sum::<f64>()
                .max(f64::MIN_POSITIVE);
            for (g, l) in g_alpha.iter_mut().zip(row) {
                *g -= l / (p * s);
            }
        }
        let mean: f64 = g_alpha.iter().zip(&alpha).map(|(g, a)| g * a).sum();
        for ((z, g), a) in logits.iter_mut().zip(&g_alpha).zip(&alpha) {
            *z -= config.learning_rate * a * (g - mean);
        }
    }
    let alpha = nn::softmax(&logits);
    Ok((
        CombinationWeights {
            logits,
            alpha: alpha.clone(),
            model_indices,
        },
        MixturePredictor::new(components, alpha),
    ))
}

/// Outcome of few-shot training: the cluster mixture, or a single-task
/// model trained on the support set when no cluster fits.
#[derive(Debug, Clone, PartialEq)]
pub enum FewShotPredictor {
    Mixture {
        weights: CombinationWeights,
        predictor: MixturePredictor,
    },
    SingleTask(TaskModel),
}

impl FewShotPredictor {
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FewShotPredictor::Mixture { predictor, .. } => predictor.predict_proba(x),
            FewShotPredictor::SingleTask(m) => m.predict_proba(x),
        }
    }

    pub fn accuracy(&self, examples: &[Example]) -> f64 {
        accuracy_by(examples, |x| nn::argmax(&self.predict_proba(x)))
    }

    pub fn alpha(&self) -> Vec<f64> {
        match self {
            FewShotPredictor::Mixture { weights, .. } => weights.alpha.clone(),
            FewShotPredictor::SingleTask(_) => Vec::new(),
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, FewShotPredictor::SingleTask(_))
    }
}

/// Best support-set accuracy among the cluster predictors compatible with the task.
pub fn best_support_accuracy(models: &[ClusterModel], task: &FewShotTask) -> Option<f64> {
    models
        .iter()
        .filter_map(|m| Component::for_task(m, task))
        .map(|c| c.accuracy(&task.support))
        .reduce(f64::max)
}

/// Mixture prediction unless no cluster predictor exceeds `threshold`
/// accuracy on the support set, in which case a single-task model is
/// trained on the support set instead.
pub fn adaptive_fsl(
    models: &[ClusterModel],
    task: &FewShotTask,
    threshold: f64,
    combine: &CombineConfig,
    fallback: &TrainConfig,
) -> Result<FewShotPredictor> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in [0, 1), got {threshold}"
        )));
    }
    task.validate()?;
    let best = best_support_accuracy(models, task).unwrap_or(0.0);
    if best <= threshold {
        log::info!(
            "task {}: best cluster support accuracy {best:.3} <= {threshold}, falling back",
            task.task_id
        );
        let model = transfer::train_single_task(&task.as_dataset(), fallback)?;
        return Ok(FewShotPredictor::SingleTask(model));
    }
    let (weights, predictor) = fsl_combine(models, task, combine)?;
    Ok(FewShotPredictor::Mixture { weights, predictor })
}

/// Per-task entry of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub task_id: String,
    pub method: String,
    pub accuracy: f64,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tasks: Vec<EvaluationRecord>,
    pub macro_accuracy: f64,
}

impl EvaluationReport {
    pub fn new(tasks: Vec<EvaluationRecord>) -> Self {
        let macro_accuracy = if tasks.is_empty() {
            0.0
        } else {
            tasks.iter().map(|t| t.accuracy).sum::<f64>() / tasks.len() as f64
        };
        EvaluationReport {
            tasks,
            macro_accuracy,
        }
    }
}

/// Multi-task evaluation: test accuracy of every task under its cluster's
/// task-specific head.
pub fn evaluate_mtl(
    tasks: &[TaskDataset],
    partition: &TaskPartition,
    models: &[ClusterModel],
) -> Result<EvaluationReport> {
    let records = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let model = &models[partition.assignment[i]];
            let accuracy = accuracy_by(t.test(), |x| {
                model
                    .predict_task(&t.task_id, x)
                    .map_or(usize::MAX, |p| nn::argmax(&p))
            });
            EvaluationRecord {
                task_id: t.task_id.clone(),
                method: "cluster-mtl".into(),
                accuracy,
                alpha: Vec::new(),
            }
        })
        .collect();
    Ok(EvaluationReport::new(records))
}
