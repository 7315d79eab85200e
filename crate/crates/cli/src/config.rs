//! The versioned TOML run configuration.
//!
//! ```toml
//! version = 1
//!
//! [gen]
//! out_dir = "data"
//! split = [9, 1, 2]          # weights, normalized
//!
//! [[gen.datasets]]
//! name = "umi-slow"
//! n_samples = 100
//! [gen.datasets.channel]
//! t = 8
//! # ... every ChannelConfig field
//!
//! [train]
//! out_dir = "runs/adaptive"
//! data = ["data/*.csi3d"]    # train split trains, val split validates
//!
//! [model]                    # ModelConfig
//! [optim]                    # TrainConfig
//! ```

use std::path::{Path, PathBuf};

use r3d_core::dataset::SuiteEntry;
use r3d_core::model::ModelConfig;
use r3d_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub version: u32,
    pub gen: Option<GenSection>,
    pub train: Option<TrainSection>,
    pub model: Option<ModelConfig>,
    pub optim: Option<TrainConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    pub out_dir: PathBuf,
    /// Train/val/test weights.
    pub split: [f64; 3],
    pub datasets: Vec<SuiteEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub out_dir: PathBuf,
    /// Glob patterns for `CSI3D1` files.
    pub data: Vec<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {}", e.message())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Usage(format!(
                "invalid config field `version`: expected {CONFIG_VERSION}, got {}",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn require_gen(&self) -> Result<&GenSection, CliError> {
        self.gen.as_ref().ok_or_else(|| missing("gen"))
    }

    pub fn require_train(&self) -> Result<(&TrainSection, &ModelConfig, &TrainConfig), CliError> {
        Ok((
            self.train.as_ref().ok_or_else(|| missing("train"))?,
            self.model.as_ref().ok_or_else(|| missing("model"))?,
            self.optim.as_ref().ok_or_else(|| missing("optim"))?,
        ))
    }
}

fn missing(section: &str) -> CliError {
    CliError::Usage(format!("invalid config: missing field `{section}`"))
}
