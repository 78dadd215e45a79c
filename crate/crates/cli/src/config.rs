//! Experiment configuration: a single JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use esam::data::{load_idx, make_blobs, make_two_moons, Dataset, Standardization};
use esam::model::MlpSpec;
use esam::optim::OptimConfig;
use esam::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoMoons {
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: usize,
    },
}

fn default_noise() -> f64 {
    0.1
}

fn default_spread() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Sgd,
    Sam,
    /// Both weight perturbation and data selection.
    Esam,
    /// Stochastic weight perturbation only (`gamma` forced to 1).
    EsamSwp,
    /// Sharpness-sensitive data selection only (`beta` forced to 1).
    EsamSds,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sgd => "sgd",
            Strategy::Sam => "sam",
            Strategy::Esam => "esam",
            Strategy::EsamSwp => "esam-swp",
            Strategy::EsamSds => "esam-sds",
        }
    }

    pub fn is_esam(self) -> bool {
        matches!(self, Strategy::Esam | Strategy::EsamSwp | Strategy::EsamSds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub layers: Vec<usize>,
    pub optim: OptimConfig,
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Output directory; nothing is written when absent.
    pub out: Option<PathBuf>,
    pub test_fraction: f64,
    /// Standardize features with statistics of the training split.
    pub standardize: bool,
    /// Compute subset-gradient cosines on every ESAM step (one extra
    /// backward per subset).
    pub record_cosines: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::TwoMoons { n: 1000, noise: 0.1 },
            layers: vec![2, 32, 32, 2],
            optim: OptimConfig::default(),
            strategy: Strategy::Esam,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            out: None,
            test_fraction: 0.2,
            standardize: true,
            record_cosines: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.effective_optim().validate()?;
        MlpSpec::new(self.layers.clone()).map_err(|e| Error::Config {
            field: "layers".into(),
            reason: e.to_string(),
        })?;
        if self.batch_size == 0 {
            return Err(Error::Config {
                field: "batch_size".into(),
                reason: "must be >= 1".into(),
            });
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config {
                field: "test_fraction".into(),
                reason: "must lie in (0, 1)".into(),
            });
        }
        Ok(())
    }

    /// Optimizer settings with the strategy's forced values applied; `beta`
    /// and `gamma` are only consulted by the ESAM variants.
    pub fn effective_optim(&self) -> OptimConfig {
        let mut cfg = self.optim.clone();
        match self.strategy {
            Strategy::Sgd | Strategy::Sam => {
                cfg.beta = 1.0;
                cfg.gamma = 1.0;
            }
            Strategy::EsamSwp => cfg.gamma = 1.0,
            Strategy::EsamSds => cfg.beta = 1.0,
            Strategy::Esam => {}
        }
        cfg
    }

    pub fn spec(&self) -> anyhow::Result<MlpSpec> {
        Ok(MlpSpec::new(self.layers.clone())?)
    }
}

/// Train and test splits ready for the model.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub standardization: Option<Standardization>,
}

pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> anyhow::Result<Dataset> {
    Ok(match spec {
        DatasetSpec::TwoMoons { n, noise } => make_two_moons(*n, *noise, seed)?,
        DatasetSpec::Blobs {
            n,
            dim,
            classes,
            spread,
        } => make_blobs(*n, *dim, *classes, *spread, seed)?,
        DatasetSpec::Idx {
            images,
            labels,
            limit,
        } => load_idx(images, labels, *limit)
            .with_context(|| format!("loading IDX files {}", images.display()))?,
    })
}

/// Generates or loads the dataset, splits it and standardizes both parts with
/// the training statistics.
pub fn prepare_data(cfg: &ExperimentConfig) -> anyhow::Result<PreparedData> {
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let spec = cfg.spec()?;
    if data.dim() != spec.input_dim() || data.num_classes != spec.num_classes() {
        bail!(
            "layers {:?} do not fit data with {} features and {} classes",
            cfg.layers,
            data.dim(),
            data.num_classes
        );
    }
    let (mut train, mut test) = data.train_test_split(cfg.test_fraction, cfg.seed)?;
    let standardization = if cfg.standardize {
        let stats = train.standardize();
        stats.apply(&mut test)?;
        Some(stats)
    } else {
        None
    };
    Ok(PreparedData {
        train,
        test,
        standardization,
    })
}
