//! Run configuration loaded from TOML, with every section optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoostFactors, EntityMode, ModelConfig};
use crate::synth::SynthConfig;
use crate::train::{BeamConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { max_size: 8000 }
    }
}

/// File locations; relative paths resolve against the working directory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub entity_mode: EntityMode,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub boost: BoostFactors,
    pub vocab: VocabConfig,
    pub synth: SynthConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            entity_mode: EntityMode::Type,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
            boost: BoostFactors::default(),
            vocab: VocabConfig::default(),
            synth: SynthConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.beam.validate()?;
        self.boost.validate()?;
        self.synth.validate()
    }
}
