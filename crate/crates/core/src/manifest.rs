//! Run manifests: everything needed to reproduce an output, as TOML.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::dataset::file_crc32;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: String,
    /// Lower-case hex CRC32 of the whole file.
    pub crc32: String,
}

impl DatasetRef {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            crc32: format!("{:08x}", file_crc32(path)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub tool: String,
    pub command: String,
    pub started_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix: Option<u64>,
    pub deterministic: bool,
    pub threads: usize,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    /// Headline numbers, e.g. `nmse_db.<dataset>.<task>`.
    #[serde(default)]
    pub results: BTreeMap<String, f64>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub masks: Vec<String>,
    #[serde(default)]
    pub datasets: Vec<DatasetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub channels: Vec<ChannelConfig>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, threads: usize, deterministic: bool) -> Self {
        Self {
            version: MANIFEST_VERSION,
            tool: format!("r3d {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            started_unix: unix_now(),
            finished_unix: None,
            deterministic,
            threads,
            seeds: BTreeMap::new(),
            params: BTreeMap::new(),
            results: BTreeMap::new(),
            outputs: Vec::new(),
            masks: Vec::new(),
            datasets: Vec::new(),
            model: None,
            train: None,
            channels: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_unix = Some(unix_now());
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot serialize manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posenc::PeVariant;

    #[test]
    fn toml_round_trip() {
        let mut m = RunManifest::new("train", 1, true);
        m.seeds.insert("model".into(), 7);
        m.params.insert("pe".into(), "rope3d_fixed".into());
        m.model = Some(ModelConfig {
            pe_variant: PeVariant::Rope3dFixed,
            ..ModelConfig::default()
        });
        m.train = Some(TrainConfig::default());
        m.channels.push(ChannelConfig::example(8, 8, 4));
        m.finish();
        let text = m.to_toml().unwrap();
        assert_eq!(RunManifest::from_toml(&text).unwrap(), m);
    }
}
