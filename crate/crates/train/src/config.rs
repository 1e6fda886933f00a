//! Run configuration, read from TOML. Missing fields take the desk-scale
//! toy defaults; [`RunConfig::full`] holds the full-scale settings.

use std::path::{Path, PathBuf};

use pulseclust_core::augment::{AugmentationPolicy, Strength, Transform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EncoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without sufficient loss improvement before stopping.
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub temperature: f64,
    /// Reliable samples mined per cluster (stages 2 and 3).
    pub neighbors: usize,
    /// Augmentation of the contrastive views, or of the strong branch in stage 3.
    pub augmentation: Strength,
    /// Replaces the tier's selection probabilities, one per transform in
    /// application order (offset, noise, conjugate, mask, resample, fading).
    pub augmentation_probabilities: Option<Vec<f64>>,
    /// Stage-3 weak branch and labeled rows.
    pub weak_augmentation: Strength,
    pub lambda: f64,
    pub tau_max: f64,
    /// Stage-3 labeled rows per step.
    pub labeled_batch_size: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 512,
            max_epochs: 30,
            patience: 5,
            min_rel_improvement: 1e-3,
            temperature: 1.0,
            neighbors: 200,
            augmentation: Strength::Strong,
            augmentation_probabilities: None,
            weak_augmentation: Strength::Weak,
            lambda: 1.0,
            tau_max: 0.99,
            labeled_batch_size: 512,
        }
    }
}

impl StageConfig {
    /// Policy of the contrastive views or of the stage-3 strong branch.
    pub fn policy(&self) -> AugmentationPolicy {
        let mut policy = AugmentationPolicy::tier(self.augmentation);
        if let Some(probs) = &self.augmentation_probabilities {
            for ((_, p), &q) in policy.steps.iter_mut().zip(probs) {
                *p = q;
            }
        }
        policy
    }

    pub fn weak_policy(&self) -> AugmentationPolicy {
        AugmentationPolicy::tier(self.weak_augmentation)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{name}: {m}")));
        if !(self.learning_rate >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        if self.batch_size < 2 || self.labeled_batch_size == 0 {
            return bad("batch sizes must be at least 2");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1]");
        }
        if !(self.tau_max > 0.0 && self.tau_max <= 1.0) {
            return bad("tau_max must lie in (0, 1]");
        }
        if let Some(probs) = &self.augmentation_probabilities {
            if probs.len() != Transform::ORDER.len() {
                return bad("augmentation_probabilities needs one entry per transform");
            }
        }
        self.policy().validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Four-class set generated on the fly.
    Toy,
    Dataset1,
    Dataset2,
    /// A manifest written by `gen`.
    File,
}

/// Per-frame scaling applied before the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputNorm {
    /// Unit mean power over the frame.
    Rms,
    /// Every sample scaled to unit modulus; keeps only the phase.
    Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    /// Toy samples per class.
    pub per_class: usize,
    /// Size factor for the generated paper datasets.
    pub scale: f64,
    pub input_norm: InputNorm,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: DataSource::Toy, path: None, per_class: 200, scale: 1.0, input_norm: InputNorm::Phase }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Per-class, per-level samples of the toy SNR sweep.
    pub snr_sweep_per_class: usize,
    pub batch_size: usize,
    pub kmeans_restarts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { snr_sweep_per_class: 100, batch_size: 128, kmeans_restarts: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub min_clusters: usize,
    pub max_clusters: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { min_clusters: 1, max_clusters: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl RunConfig {
    /// Desk-scale settings: four classes, narrowed encoder, small batches.
    pub fn toy() -> Self {
        let stage1 = StageConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 64,
            temperature: 0.1,
            augmentation: Strength::Strong,
            ..StageConfig::default()
        };
        let stage2 = StageConfig { learning_rate: 2e-4, neighbors: 25, ..stage1.clone() };
        let stage3 = StageConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 2e-4,
            batch_size: 64,
            labeled_batch_size: 32,
            neighbors: 40,
            augmentation: Strength::Moderate,
            weak_augmentation: Strength::Weak,
            ..StageConfig::default()
        };
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/toy"),
            data: DataConfig::default(),
            encoder: EncoderConfig::desk(4),
            stage1,
            stage2,
            stage3,
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    /// Full-scale settings on dataset 1.
    pub fn full() -> Self {
        let stage1 = StageConfig::default();
        let stage2 = StageConfig { neighbors: 200, ..StageConfig::default() };
        let stage3 = StageConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 2e-4,
            neighbors: 300,
            augmentation: Strength::Moderate,
            ..StageConfig::default()
        };
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/full"),
            data: DataConfig { source: DataSource::Dataset1, ..DataConfig::default() },
            encoder: EncoderConfig::full(),
            stage1,
            stage2,
            stage3,
            eval: EvalConfig::default(),
            sweep: SweepConfig { min_clusters: 1, max_clusters: 16 },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    /// Checks settings that do not depend on the dataset.
    pub fn validate(&self, frame_len: usize) -> Result<()> {
        self.encoder.validate(frame_len)?;
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")?;
        self.stage3.validate("stage3")?;
        if self.sweep.min_clusters == 0 || self.sweep.min_clusters > self.sweep.max_clusters {
            return Err(Error::Config("sweep cluster range is empty".into()));
        }
        if self.data.source == DataSource::File && self.data.path.is_none() {
            return Err(Error::Config("data.source = \"file\" needs data.path".into()));
        }
        if !(self.data.scale > 0.0) {
            return Err(Error::Config("data.scale must be positive".into()));
        }
        Ok(())
    }

    /// Mined-set sizes must fit the per-cluster population.
    pub fn validate_for(&self, num_samples: usize, num_clusters: usize) -> Result<()> {
        let per_cluster = num_samples / num_clusters.max(1);
        for (name, k) in [("stage2", self.stage2.neighbors), ("stage3", self.stage3.neighbors)] {
            if k == 0 || k > per_cluster {
                return Err(Error::Config(format!(
                    "{name}.neighbors = {k} must lie in 1..={per_cluster} (dataset size / clusters)"
                )));
            }
        }
        Ok(())
    }
}
