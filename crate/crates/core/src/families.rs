//! Synthetic families of classification tasks with planted cluster structure.
//!
//! Every cluster owns a block of feature dimensions (its subspace) and a set
//! of class prototypes inside that block. A task of the cluster perturbs the
//! prototypes slightly; its examples are a prototype plus isotropic noise in
//! the subspace and nuisance noise everywhere else. Tasks of one cluster are
//! therefore mutually informative, tasks of different clusters are not.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Example, TaskDataset};
use crate::error::{Error, Result};
use crate::learning::FewShotTask;
use crate::seed::{self, stage, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilySpec {
    pub clusters: usize,
    pub tasks_per_cluster: usize,
    /// Feature dimensions owned by each concept.
    pub subspace_dim: usize,
    /// Number of disjoint subspaces; must be at least `clusters`. Extra
    /// subspaces are left for out-of-cluster concepts.
    pub subspaces: usize,
    pub label_count: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Norm scale of class prototypes.
    pub separation: f64,
    /// Standard deviation of within-subspace noise.
    pub noise: f64,
    /// Standard deviation of noise outside the concept's subspace.
    pub nuisance: f64,
    /// Per-task perturbation of the cluster prototypes.
    pub task_jitter: f64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            clusters: 3,
            tasks_per_cluster: 4,
            subspace_dim: 4,
            subspaces: 3,
            label_count: 2,
            train: 40,
            valid: 40,
            test: 100,
            separation: 2.0,
            noise: 1.0,
            nuisance: 1.0,
            task_jitter: 0.2,
        }
    }
}

impl FamilySpec {
    pub fn dim(&self) -> usize {
        self.subspace_dim * self.subspaces
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0
            || self.tasks_per_cluster == 0
            || self.subspace_dim == 0
            || self.label_count == 0
        {
            return Err(Error::InvalidArgument(
                "family sizes must be positive".into(),
            ));
        }
        if self.subspaces < self.clusters {
            return Err(Error::InvalidArgument(format!(
                "{} subspaces cannot host {} clusters",
                self.subspaces, self.clusters
            )));
        }
        Ok(())
    }
}

/// Class prototypes living in one subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub subspace: usize,
    pub prototypes: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl Concept {
    pub fn random(spec: &FamilySpec, subspace: usize, rng: &mut Rng) -> Self {
        let prototypes = (0..spec.label_count)
            .map(|_| {
                (0..spec.subspace_dim)
                    .map(|_| spec.separation * gaussian(rng))
                    .collect()
            })
            .collect();
        Concept {
            subspace,
            prototypes,
        }
    }

    /// Same geometry with the labels permuted.
    pub fn relabeled(&self, permutation: &[usize]) -> Self {
        Concept {
            subspace: self.subspace,
            prototypes: permutation
                .iter()
                .map(|&p| self.prototypes[p].clone())
                .collect(),
        }
    }

    fn jittered(&self, amount: f64, rng: &mut Rng) -> Self {
        Concept {
            subspace: self.subspace,
            prototypes: self
                .prototypes
                .iter()
                .map(|p| p.iter().map(|v| v + amount * gaussian(rng)).collect())
                .collect(),
        }
    }

    fn example(&self, spec: &FamilySpec, label: usize, rng: &mut Rng) -> Example {
        let lo = self.subspace * spec.subspace_dim;
        let x = (0..spec.dim())
            .map(|d| {
                if (lo..lo + spec.subspace_dim).contains(&d) {
                    self.prototypes[label][d - lo] + spec.noise * gaussian(rng)
                } else {
                    spec.nuisance * gaussian(rng)
                }
            })
            .collect();
        Example::new(x, label)
    }

    /// `count` examples with labels cycling through the label space, in random order.
    pub fn examples(&self, spec: &FamilySpec, count: usize, rng: &mut Rng) -> Vec<Example> {
        let mut labels: Vec<usize> = (0..count).map(|i| i % spec.label_count).collect();
        for i in (1..labels.len()).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        labels
            .into_iter()
            .map(|l| self.example(spec, l, rng))
            .collect()
    }

    /// A task drawn around this concept.
    pub fn task(
        &self,
        task_id: impl Into<String>,
        spec: &FamilySpec,
        rng: &mut Rng,
    ) -> TaskDataset {
        let own = self.jittered(spec.task_jitter, rng);
        TaskDataset::new(
            task_id,
            spec.label_count,
            own.examples(spec, spec.train, rng),
            own.examples(spec, spec.valid, rng),
            own.examples(spec, spec.test, rng),
        )
    }

    /// A few-shot task: `shots` support examples per label and `query` query examples.
    pub fn few_shot(
        &self,
        task_id: impl Into<String>,
        spec: &FamilySpec,
        shots: usize,
        query: usize,
        rng: &mut Rng,
    ) -> Result<FewShotTask> {
        let own = self.jittered(spec.task_jitter, rng);
        let support = own.examples(spec, shots * spec.label_count, rng);
        let query = own.examples(spec, query, rng);
        FewShotTask::new(task_id, spec.label_count, support, query)
    }
}

#[derive(Debug, Clone)]
pub struct Family {
    pub tasks: Vec<TaskDataset>,
    pub membership: Vec<usize>,
    pub concepts: Vec<Concept>,
}

/// Generates `clusters * tasks_per_cluster` tasks, cluster-major order
/// shuffled by the seed.
pub fn generate_family(spec: &FamilySpec, seed: u64) -> Result<Family> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(seed, &[stage::SYNTH, 2]));
    let concepts: Vec<Concept> = (0..spec.clusters)
        .map(|c| Concept::random(spec, c, &mut rng))
        .collect();
    let mut membership: Vec<usize> = (0..spec.clusters)
        .flat_map(|c| std::iter::repeat_n(c, spec.tasks_per_cluster))
        .collect();
    for i in (1..membership.len()).rev() {
        membership.swap(i, rng.random_range(0..=i));
    }
    let tasks = membership
        .iter()
        .enumerate()
        .map(|(i, &c)| concepts[c].task(format!("task{i:03}"), spec, &mut rng))
        .collect();
    Ok(Family {
        tasks,
        membership,
        concepts,
    })
}
