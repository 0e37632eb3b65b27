//! Task datasets and their JSON file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
}

impl Example {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Example { x, y }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Example>,
    #[serde(default)]
    pub valid: Vec<Example>,
    #[serde(default)]
    pub test: Vec<Example>,
}

/// One classification task with a train/validation/test split over
/// fixed-length real feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: String,
    pub label_count: usize,
    pub splits: Splits,
}

impl TaskDataset {
    pub fn new(
        task_id: impl Into<String>,
        label_count: usize,
        train: Vec<Example>,
        valid: Vec<Example>,
        test: Vec<Example>,
    ) -> Self {
        TaskDataset {
            task_id: task_id.into(),
            label_count,
            splits: Splits { train, valid, test },
        }
    }

    pub fn train(&self) -> &[Example] {
        &self.splits.train
    }

    pub fn valid(&self) -> &[Example] {
        &self.splits.valid
    }

    pub fn test(&self) -> &[Example] {
        &self.splits.test
    }

    /// Feature dimension, taken from the first example of any split.
    pub fn dim(&self) -> Option<usize> {
        self.examples().next().map(|e| e.x.len())
    }

    fn examples(&self) -> impl Iterator<Item = &Example> {
        self.splits
            .train
            .iter()
            .chain(&self.splits.valid)
            .chain(&self.splits.test)
    }

    /// Checks label ranges, a shared feature dimension and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.label_count == 0 {
            return Err(Error::InvalidArgument(format!(
                "task {} has label_count 0",
                self.task_id
            )));
        }
        let dim = self.dim();
        for e in self.examples() {
            if e.y >= self.label_count {
                return Err(Error::LabelOutOfRange {
                    label: e.y,
                    label_count: self.label_count,
                });
            }
            if Some(e.x.len()) != dim {
                return Err(Error::DimMismatch {
                    expected: dim.unwrap_or(0),
                    got: e.x.len(),
                });
            }
            if e.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingInput(path.display().to_string()))?;
        let task: TaskDataset =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        task.validate()?;
        Ok(task)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Loads every `*.json` file of a directory, ordered by file name.
pub fn load_task_dir(dir: &Path) -> Result<Vec<TaskDataset>> {
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir.display().to_string()));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| TaskDataset::load(p)).collect()
}
