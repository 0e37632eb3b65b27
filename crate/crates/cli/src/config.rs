//! Experiment configuration: one JSON file with a section per stage.
//! Every field has a default, and command-line flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use taskclust::completion::SolverConfig;
use taskclust::families::FamilySpec;
use taskclust::filter::FilterParams;
use taskclust::learning::{CombineConfig, ModelKind};
use taskclust::nn::TrainConfig;
use taskclust::synth::SamplingMode;
use taskclust::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub train: TrainConfig,
    pub estimate: EstimateSection,
    pub filter: FilterParams,
    pub solver: SolverConfig,
    pub cluster: ClusterSection,
    pub learn: LearnSection,
    pub sweep: SweepSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    /// Task pairs to evaluate; all pairs when absent.
    pub pair_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    #[serde(rename = "K")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnSection {
    /// Model kind for few-shot prediction; multi-task always uses a shared
    /// encoder with per-task heads.
    pub fsl_kind: ModelKind,
    pub combine: CombineConfig,
    pub adaptive: bool,
    pub threshold: f64,
}

impl Default for LearnSection {
    fn default() -> Self {
        LearnSection {
            fsl_kind: ModelKind::MetricEncoder,
            combine: CombineConfig::default(),
            adaptive: false,
            threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n: usize,
    pub k: usize,
    pub m1_fractions: Vec<f64>,
    pub m2_fractions: Vec<f64>,
    pub trials: usize,
    pub mode: SamplingMode,
    pub lambda: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            n: 30,
            k: 3,
            m1_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            m2_fractions: vec![0.0, 0.05, 0.1],
            trials: 10,
            mode: SamplingMode::PairAware,
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub family: FamilySpec,
    /// Planted score matrices: task count, cluster count and score levels.
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub within: f64,
    pub cross: f64,
    pub noise: f64,
    pub pair_fraction: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            family: FamilySpec::default(),
            n: 12,
            k: 3,
            within: 0.9,
            cross: 0.1,
            noise: 0.05,
            pair_fraction: 0.3,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = taskclust::io::read(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }
}

/// Parses a grid given either as a comma list (`0.1,0.2`) or as an
/// inclusive linear range `start:stop:count`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("malformed grid '{text}'"));
    let number = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(bad)
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, count] => {
            let (a, b) = (number(start)?, number(stop)?);
            let count: usize = count.trim().parse().map_err(|_| bad())?;
            match count {
                0 => Err(bad()),
                1 => Ok(vec![a]),
                _ => Ok((0..count)
                    .map(|i| a + (b - a) * i as f64 / (count - 1) as f64)
                    .collect()),
            }
        }
        [list] => list.split(',').map(number).collect(),
        _ => Err(bad()),
    }
}
