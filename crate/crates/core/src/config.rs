//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ablation::AblationConfig;
use crate::contextual::ContextualConfig;
use crate::error::{CadError, Result};
use crate::model::ModelConfig;
use crate::pretrain::{PairDims, PretrainConfig, StreamShape};
use crate::synthetic::SyntheticConfig;
use crate::train::{OptimizerConfig, SampleDims};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub init_from: Option<PathBuf>,
    pub model: ModelConfig,
    pub contextual: ContextualConfig,
    pub pretrain: PretrainConfig,
    pub data: SyntheticConfig,
    pub optimizer: OptimizerConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            out: PathBuf::from("runs"),
            init_from: None,
            model: ModelConfig::default(),
            contextual: ContextualConfig::default(),
            pretrain: PretrainConfig::default(),
            data: SyntheticConfig::default(),
            optimizer: OptimizerConfig::default(),
            ablation: AblationConfig::default(),
        };
        cfg.sync_dims();
        cfg
    }
}

impl RunConfig {
    /// Parses TOML text. Relative paths stay relative to the caller's
    /// working directory.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CadError::ConfigParse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.sync_dims();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CadError::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Copies feature dims from the data section into the model section.
    pub fn sync_dims(&mut self) {
        self.model.audio_dim = self.data.feat_dim;
        self.model.visual_dim = self.data.feat_dim;
        self.model.text_dim = self.data.text_dim;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.contextual.validate()?;
        self.pretrain.validate()?;
        self.data.validate()?;
        self.optimizer.validate()?;
        self.ablation.validate()?;
        if self.model.n_time_labels != self.pretrain.n_time_labels {
            return Err(CadError::Config(format!(
                "model.n_time_labels = {} disagrees with pretrain.n_time_labels = {}",
                self.model.n_time_labels, self.pretrain.n_time_labels
            )));
        }
        let vocab = self.data.vocab().size();
        if self.model.n_answers < vocab {
            return Err(CadError::Config(format!(
                "model.n_answers = {} is smaller than the {vocab}-answer vocabulary of the data section",
                self.model.n_answers
            )));
        }
        if let Some(p) = &self.init_from {
            if !p.is_file() {
                return Err(CadError::Config(format!("init_from checkpoint {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn sample_dims(&self) -> SampleDims {
        SampleDims {
            n_cues: self.data.n_cues,
            spatial: self.data.spatial,
            feat_dim: self.data.feat_dim,
            text_dim: self.data.text_dim,
        }
    }

    pub fn pair_dims(&self) -> PairDims {
        PairDims {
            feat_dim: self.data.feat_dim,
            spatial: self.data.spatial,
            text_dim: self.data.text_dim,
        }
    }

    pub fn stream_shape(&self) -> StreamShape {
        StreamShape {
            spatial: self.data.spatial,
            object_positions: self.data.object_positions,
            noise: self.data.noise,
        }
    }

    /// Prototypes needed to cover both the QA classes and the time labels.
    pub fn n_prototypes(&self) -> usize {
        self.data.n_classes.max(self.pretrain.n_time_labels)
    }
}
