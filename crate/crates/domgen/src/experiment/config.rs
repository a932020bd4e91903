//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use domgen_core::augment::Augmentation;
use domgen_core::classical::{ForestConfig, LinearConfig};
use domgen_core::ensemble::{MetaConfig, DEFAULT_META_HIDDEN};
use domgen_core::nn::TrainConfig;
use domgen_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use super::preprocess::DatasetId;
use crate::error::{Error, Result};
use crate::formats::read_file;

/// One side of the domain pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub id: DatasetId,
    /// A `.dgim` container, or the dataset's native files (IDX image + label
    /// files for MNIST, binary batches for CIFAR-10), or a pixel CSV.
    pub paths: Vec<PathBuf>,
    /// Seeded subsample drawn right after loading.
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumModelsKeyword {
    /// One base model per class.
    Classes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumModels {
    Count(usize),
    Keyword(NumModelsKeyword),
}

impl NumModels {
    pub fn resolve(self, num_classes: usize) -> usize {
        match self {
            NumModels::Count(n) => n,
            NumModels::Keyword(NumModelsKeyword::Classes) => num_classes,
        }
    }
}

/// Table rows, in output order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Base,
    EnA,
    EnM,
    EnM2,
    Hcnn,
    EnT,
    Rf,
    Svm,
    Lr,
}

impl Learner {
    pub const ALL: [Learner; 9] = [
        Learner::Base,
        Learner::EnA,
        Learner::EnM,
        Learner::EnM2,
        Learner::Hcnn,
        Learner::EnT,
        Learner::Rf,
        Learner::Svm,
        Learner::Lr,
    ];

    /// Row label (the base row expands to one row per model).
    pub fn row_name(self) -> &'static str {
        match self {
            Learner::Base => "model",
            Learner::EnA => "EnA",
            Learner::EnM => "EnM",
            Learner::EnM2 => "EnM2",
            Learner::Hcnn => "HCNN",
            Learner::EnT => "EnT",
            Learner::Rf => "RF",
            Learner::Svm => "SVM",
            Learner::Lr => "LR",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// File stem of the CSV, markdown and metadata outputs.
    pub name: String,
    pub checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            name: "results".into(),
            checkpoints: true,
        }
    }
}

fn default_num_models() -> NumModels {
    NumModels::Count(5)
}

fn default_learners() -> Vec<Learner> {
    Learner::ALL.to_vec()
}

fn default_val_fraction() -> f32 {
    0.1
}

fn default_hidden() -> usize {
    DEFAULT_META_HIDDEN
}

fn default_train() -> TrainConfig {
    TrainConfig::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DatasetSource,
    pub target: DatasetSource,
    #[serde(default = "default_num_models")]
    pub num_models: NumModels,
    /// Global seed: subsampling, splitting, subset assignment, HCNN, meta and classical learners.
    #[serde(default)]
    pub seed: u64,
    /// One seed per base model; derived from `seed` when absent.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Optimiser settings shared by the base CNNs and the HCNN (its `seed` field is ignored).
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f32,
    /// Replaces the default pool for the source's domain.
    #[serde(default)]
    pub augmentation_pool: Option<Vec<Augmentation>>,
    #[serde(default = "default_learners")]
    pub learners: Vec<Learner>,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default = "default_hidden")]
    pub meta_hidden: usize,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub linear: LinearConfig,
    /// Caps the S_train samples seen by RF, SVM and LR.
    #[serde(default)]
    pub classical_limit: Option<usize>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// A config with every default, for the given pair.
    pub fn new(source: DatasetSource, target: DatasetSource) -> Self {
        Self {
            source,
            target,
            num_models: default_num_models(),
            seed: 0,
            seeds: None,
            train: TrainConfig::default(),
            val_fraction: default_val_fraction(),
            augmentation_pool: None,
            learners: default_learners(),
            meta: MetaConfig::default(),
            meta_hidden: DEFAULT_META_HIDDEN,
            forest: ForestConfig::default(),
            linear: LinearConfig::default(),
            classical_limit: None,
            output: OutputConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        let text = std::str::from_utf8(&text).map_err(|_| Error::Config("config is not UTF-8".into()))?;
        let mut cfg = Self::from_json(text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.source.paths.iter_mut().for_each(anchor);
        cfg.target.paths.iter_mut().for_each(anchor);
        anchor(&mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.id == self.target.id {
            return Err(Error::Config("source and target must differ".into()));
        }
        for side in [&self.source, &self.target] {
            if side.paths.is_empty() {
                return Err(Error::Config(format!("no paths for {}", side.id)));
            }
            if side.limit == Some(0) {
                return Err(Error::Config(format!("limit for {} must be positive", side.id)));
            }
        }
        if self.num_models == NumModels::Count(0) {
            return Err(Error::Config("num_models must be at least 1".into()));
        }
        if let (NumModels::Count(n), Some(seeds)) = (self.num_models, &self.seeds) {
            if seeds.len() != n {
                return Err(Error::Config(format!("{} seeds for {n} models", seeds.len())));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::Config(format!("val_fraction {} outside (0, 0.5)", self.val_fraction)));
        }
        if self.learners.is_empty() {
            return Err(Error::Config("no learners enabled".into()));
        }
        if self.meta_hidden == 0 {
            return Err(Error::Config("meta_hidden must be positive".into()));
        }
        if let Some(pool) = &self.augmentation_pool {
            for a in pool {
                a.validate()?;
            }
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn enabled(&self, learner: Learner) -> bool {
        self.learners.contains(&learner)
    }

    /// Per-model seeds for `n` models.
    pub fn base_seeds(&self, n: usize) -> Result<Vec<u64>> {
        match &self.seeds {
            Some(s) if s.len() == n => Ok(s.clone()),
            Some(s) => Err(Error::Config(format!("{} seeds for {n} models", s.len()))),
            None => Ok((0..n as u64).map(|i| derive_seed(self.seed, 1000 + i)).collect()),
        }
    }
}
