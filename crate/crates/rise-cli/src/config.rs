//! Declarative run configuration for the end-to-end pipeline.
//!
//! A run config is one JSON file; every field except `manifest` and
//! `out_dir` has a default. The resolved config (defaults filled in,
//! overrides applied) is written back into the run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rise_core::embedder::{TrainConfig, Weighting};
use rise_core::hardness::VarianceKind;
use rise_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Bundle manifest to operate on.
    pub manifest: PathBuf,
    /// Directory the run writes into.
    pub out_dir: PathBuf,
    /// Master seed; propagates to every stochastic stage.
    pub seed: u64,
    pub hardness: HardnessSection,
    pub confusion: ConfusionSection,
    pub train: TrainSection,
    pub rerank: RerankSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::new(),
            out_dir: PathBuf::new(),
            seed: 0,
            hardness: HardnessSection::default(),
            confusion: ConfusionSection::default(),
            train: TrainSection::default(),
            rerank: RerankSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct HardnessSection {
    /// Explicit variance threshold; `null` estimates it from the dev split.
    pub threshold: Option<f64>,
    pub variance: VarianceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfusionSection {
    /// Smoothing added to every negative weight during training.
    pub neg_smoothing: f64,
}

impl Default for ConfusionSection {
    fn default() -> Self {
        ConfusionSection {
            neg_smoothing: 0.01,
        }
    }
}

/// Projection head requested for the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Train an affine head with the contrastive objective.
    #[default]
    Linear,
    /// Use raw features as the embedding space (no training).
    Identity,
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(HeadMode::Linear),
            "identity" => Ok(HeadMode::Identity),
            other => Err(Error::BadConfig(format!(
                "mode must be linear|identity, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub mode: HeadMode,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weighting: Weighting,
    pub tau: f64,
    pub embed_dim: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let tc = TrainConfig::default();
        TrainSection {
            mode: HeadMode::Linear,
            learning_rate: tc.learning_rate,
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            weighting: tc.weighting,
            tau: tc.tau,
            embed_dim: tc.embed_dim,
        }
    }
}

impl TrainSection {
    /// Assemble the core training config for this run.
    pub fn to_train_config(&self, seed: u64, neg_smoothing: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            weighting: self.weighting,
            tau: self.tau,
            neg_smoothing,
            embed_dim: self.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RerankSection {
    /// Map similarities through `(s + 1) / 2` before the product.
    pub sim_clamp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Ks for the top-k oracle curve; clipped to C at run time.
    pub topk: Vec<usize>,
    /// Average macro-F1 over all classes, not just the present ones.
    pub all_classes: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            topk: vec![1, 3, 5],
            all_classes: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))?;
        // Relative paths in the config resolve against the config file.
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Ok(cfg.rebase(base))
    }

    fn rebase(mut self, base: &Path) -> Self {
        if self.manifest.is_relative() {
            self.manifest = base.join(&self.manifest);
        }
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifest.as_os_str().is_empty() {
            return Err(Error::BadConfig("config is missing `manifest`".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::BadConfig("config is missing `out_dir`".into()));
        }
        if !self.manifest.exists() {
            return Err(Error::MissingFile(self.manifest.clone()));
        }
        self.train
            .to_train_config(self.seed, self.confusion.neg_smoothing)
            .validate()?;
        if let Some(t) = self.hardness.threshold {
            if t < 0.0 {
                return Err(Error::BadConfig(format!(
                    "hardness threshold must be non-negative, got {t}"
                )));
            }
        }
        Ok(())
    }
}
