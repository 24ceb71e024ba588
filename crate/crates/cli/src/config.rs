//! Run configuration file: `[model]`, `[train]`, `[data]` and `[eval]`
//! tables mirroring the library config types.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vf_core::data::Task;
use vf_core::model::ModelConfig;
use vf_core::train::TrainConfig;
use vf_core::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus manifest; relative to the config file.
    pub manifest: PathBuf,
    /// Pronunciation lexicon; the built-in demo lexicon when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Training and validation crop length in seconds.
    #[serde(default = "default_crop")]
    pub crop_seconds: Option<f64>,
    #[serde(default = "default_train_mixtures")]
    pub train_mixtures: usize,
    #[serde(default = "default_eval_mixtures")]
    pub val_mixtures: usize,
}

fn default_crop() -> Option<f64> {
    Some(1.0)
}

fn default_train_mixtures() -> usize {
    64
}

fn default_eval_mixtures() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub task: Task,
    pub split: String,
    pub mixtures: usize,
    pub crop_seconds: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { task: Task::Separation, split: "test".into(), mixtures: 16, crop_seconds: Some(2.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.manifest);
        if let Some(p) = cfg.data.lexicon.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.train.init_checkpoint.as_mut() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; also returns the raw text.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base).map_err(|e| match e {
            CoreError::Config(m) => CoreError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.train_mixtures == 0 {
            return Err(CoreError::Config("data.train_mixtures must be positive".into()));
        }
        if let Some(s) = self.data.crop_seconds {
            if !(s > 0.0) {
                return Err(CoreError::Config(format!("data.crop_seconds must be positive, got {s}")));
            }
        }
        Ok(())
    }
}
