//! Strict JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::model::{DecoderFamily, ModelConfig, ObjectiveKind};
use crate::training::TrainConfig;

pub const OUTPUT_DIR_ENV: &str = "MIM_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Gmm2d,
    Mnist,
    Fashion,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Gmm2d => "gmm2d",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
        }
    }

    pub fn is_image(self) -> bool {
        !matches!(self, DatasetKind::Gmm2d)
    }

    pub fn x_dim(self) -> usize {
        if self.is_image() {
            784
        } else {
            2
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown dataset `{s}` (expected gmm2d, mnist or fashion)")))
    }
}

/// Model fields; anything omitted takes a per-dataset default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub x_dim: Option<usize>,
    pub z_dim: Option<usize>,
    pub hidden_units: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub decoder_family: Option<DecoderFamily>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience_epochs: Option<usize>,
    pub max_epochs: Option<usize>,
    /// Used only when `seeds` is absent.
    pub seed: Option<u64>,
}

fn default_k() -> usize {
    5
}

fn default_n_is() -> usize {
    128
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_k")]
    pub ksg_k: usize,
    #[serde(default = "default_k")]
    pub knn_k: usize,
    #[serde(default = "default_n_is")]
    pub n_is: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ksg_k: default_k(),
            knn_k: default_k(),
            n_is: default_n_is(),
        }
    }
}

/// Dataset location and split sizes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding the four IDX files (images only).
    pub dir: Option<PathBuf>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub n_test: Option<usize>,
    /// Seed for synthesis or the train/val shuffle; defaults to 0 so every
    /// run of a sweep sees the same data.
    pub seed: Option<u64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub objective: ObjectiveKind,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the key path of the first schema error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies the output-directory environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        self.train_config(0).validate()?;
        if self.eval.ksg_k == 0 || self.eval.knn_k == 0 || self.eval.n_is == 0 {
            return Err(Error::Config("eval.ksg_k, eval.knn_k and eval.n_is must be >= 1".into()));
        }
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.dataset.is_image() && self.data.dir.is_none() {
            return Err(Error::Config(format!("data.dir is required for dataset `{}`", self.dataset.name())));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.train.seed.unwrap_or(0)])
    }

    /// Resolved model configuration.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let x_dim = self.dataset.x_dim();
        if let Some(x) = self.model.x_dim {
            if x != x_dim {
                return Err(Error::Config(format!(
                    "model.x_dim = {x} but dataset `{}` has {x_dim} dimensions",
                    self.dataset.name()
                )));
            }
        }
        let (z, h, family) = if self.dataset.is_image() {
            (16, 500, DecoderFamily::Bernoulli)
        } else {
            (2, 20, DecoderFamily::Gaussian)
        };
        Ok(ModelConfig {
            x_dim,
            z_dim: self.model.z_dim.unwrap_or(z),
            hidden_units: self.model.hidden_units.unwrap_or(h),
            hidden_layers: self.model.hidden_layers.unwrap_or(1),
            decoder_family: self.model.decoder_family.unwrap_or(family),
            objective: self.objective,
        })
    }

    /// Resolved training configuration for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        let t = &self.train;
        TrainConfig {
            lr: t.lr.unwrap_or(d.lr),
            beta1: t.beta1.unwrap_or(d.beta1),
            beta2: t.beta2.unwrap_or(d.beta2),
            eps: t.eps.unwrap_or(d.eps),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            patience_epochs: t.patience_epochs.unwrap_or(d.patience_epochs),
            max_epochs: t
                .max_epochs
                .unwrap_or(if self.dataset.is_image() { 200 } else { 2000 }),
            seed,
        }
    }

    /// Resolved `(n_train, n_val, n_test)`; `None` means "all available".
    pub fn split_sizes(&self) -> (Option<usize>, Option<usize>, Option<usize>) {
        let d = &self.data;
        if self.dataset.is_image() {
            (d.n_train, d.n_val, d.n_test)
        } else {
            (
                Some(d.n_train.unwrap_or(10_000)),
                Some(d.n_val.unwrap_or(1_000)),
                Some(d.n_test.unwrap_or(1_000)),
            )
        }
    }
}
