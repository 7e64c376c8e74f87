use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cloudseed::nn::TrainConfig;
use cloudseed::pointcloud::{Category, SceneSpec};
use cloudseed::workflow::QAConfig;
use serde::{Deserialize, Serialize};

/// Click-volume edge length per category, in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMap {
    pub car: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl Default for KMap {
    fn default() -> Self {
        Self {
            car: Category::Car.default_k(),
            pedestrian: Category::Pedestrian.default_k(),
            cyclist: Category::Cyclist.default_k(),
        }
    }
}

impl KMap {
    pub fn get(&self, c: Category) -> f64 {
        match c {
            Category::Car => self.car,
            Category::Pedestrian => self.pedestrian,
            Category::Cyclist => self.cyclist,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegSettings {
    /// Points fed to the network per forward pass.
    pub count: usize,
    pub clicks_per_instance: usize,
    pub threshold: f64,
    pub train: TrainConfig,
}

impl Default for SegSettings {
    fn default() -> Self {
        Self {
            count: 256,
            clicks_per_instance: 2,
            threshold: 0.5,
            train: TrainConfig {
                max_iters: 5000,
                batch_size: 16,
                eval_every: 100,
                decay_every: 501,
                early_stop_patience: 5000,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxSettings {
    pub heading_bins: usize,
    pub count: usize,
    pub train: TrainConfig,
}

impl Default for BoxSettings {
    fn default() -> Self {
        Self {
            heading_bins: cloudseed::boxfit::DEFAULT_HEADING_BINS,
            count: 256,
            train: TrainConfig {
                max_iters: 4000,
                batch_size: 32,
                eval_every: 200,
                decay_every: 401,
                early_stop_patience: 4000,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServePaths {
    /// Unlabelled scenes handed out in batches.
    pub pool: Option<PathBuf>,
    /// Labelled scenes hidden in batches.
    pub golden: Option<PathBuf>,
    /// Labelled scenes used for training sequences.
    pub training: Option<PathBuf>,
    pub click_db: Option<PathBuf>,
    /// Session snapshots are written here after every change.
    pub sessions: Option<PathBuf>,
}

/// Everything a job can be configured with. Every field has a default, so a
/// config file only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobConfig {
    pub seed: u64,
    pub category: Category,
    pub k: KMap,
    pub qa: QAConfig,
    pub segmentation: SegSettings,
    pub boxfit: BoxSettings,
    pub synth: SceneSpec,
    pub serve: ServePaths,
    pub listen: String,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            category: Category::Car,
            k: KMap::default(),
            qa: QAConfig::default(),
            segmentation: SegSettings::default(),
            boxfit: BoxSettings::default(),
            synth: SceneSpec::default(),
            serve: ServePaths::default(),
            listen: "127.0.0.1:8080".into(),
        }
    }
}

impl JobConfig {
    /// TOML unless the file name ends in `.json`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.qa.validate()?;
        self.segmentation.train.validate()?;
        self.boxfit.train.validate()?;
        self.synth.validate()?;
        for c in Category::ALL {
            if !(self.k.get(c) > 0.0) {
                bail!("k for {c} must be positive");
            }
        }
        if self.segmentation.count == 0 || self.boxfit.count == 0 || self.boxfit.heading_bins == 0 {
            bail!("point counts and heading bins must be positive");
        }
        if !(0.0..=1.0).contains(&self.segmentation.threshold) {
            bail!("segmentation threshold must lie in [0, 1]");
        }
        Ok(())
    }
}
