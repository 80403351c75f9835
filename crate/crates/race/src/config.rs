//! Run configuration: defaults, then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use race_core::dataset::SplitRatios;
use race_core::train::{EncoderMode, SplitMode, TrainConfig};
use race_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::{RaceError, Result};

/// Environment variable overriding the cache root.
pub const CACHE_ENV: &str = "RACE_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".race-cache";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    pub name: String,
    pub revision: String,
    /// Hook command for the real encoder; see [`crate::hooks::SubprocessEncoder`].
    pub command: Vec<String>,
    /// Tokens per encoder call.
    pub window: usize,
    /// Overlap between consecutive windows of a long document.
    pub overlap: usize,
    pub mock_seed: u64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            name: "roberta-base".into(),
            revision: "main".into(),
            command: Vec::new(),
            window: 512,
            overlap: race_core::embed::DEFAULT_CHUNK_OVERLAP,
            mock_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParserSpec {
    /// Hook command for the RST parser; empty means the sentence-level
    /// fallback segmenter.
    pub command: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// Train/validation/test fractions for stratified and group splits.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        let r = SplitRatios::HART;
        DataSpec { ratios: [r.train, r.val, r.test], seed: 0 }
    }
}

impl DataSpec {
    pub fn split_ratios(&self) -> Result<SplitRatios> {
        let [a, b, c] = self.ratios;
        SplitRatios::new(a, b, c).map_err(|e| RaceError::Config(e.to_string()))
    }
}

/// Which encoder produced a set of embeddings; stored in checkpoints and
/// part of the embedding cache key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderIdentity {
    pub name: String,
    pub revision: String,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub encoder: EncoderSpec,
    pub parser: ParserSpec,
    pub data: DataSpec,
    /// FPR cap for the headline operating point in summaries.
    pub fpr_cap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            encoder: EncoderSpec::default(),
            parser: ParserSpec::default(),
            data: DataSpec::default(),
            fpr_cap: 0.01,
            cache_dir: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub split: Option<SplitMode>,
    pub encoder: Option<EncoderMode>,
    pub fpr_cap: Option<f64>,
    pub cache_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| RaceError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RaceError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(RaceError::io(path))?;
        Self::from_toml(&text).map_err(|e| RaceError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, overlaid by `file`, overlaid by `flags`. The cache root is
    /// the flag, else `env_cache`, else the file's, else the default.
    pub fn resolve(file: Option<&Path>, flags: &Overrides, env_cache: Option<PathBuf>) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(seed) = flags.seed {
            cfg.train.seeds = vec![seed];
            cfg.data.seed = seed;
        }
        if let Some(split) = flags.split {
            cfg.train.split = split;
        }
        if let Some(enc) = flags.encoder {
            cfg.train.encoder = enc;
        }
        if let Some(cap) = flags.fpr_cap {
            cfg.fpr_cap = cap;
            cfg.train.selection_fpr = cap;
        }
        if let Some(dir) = flags.cache_dir.clone().or(env_cache) {
            cfg.cache_dir = Some(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fpr_cap > 0.0 && self.fpr_cap < 1.0) {
            return Err(RaceError::Config(format!("fpr_cap must be in (0, 1), got {}", self.fpr_cap)));
        }
        if self.encoder.window == 0 || self.encoder.overlap >= self.encoder.window {
            return Err(RaceError::Config("encoder overlap must be smaller than the window".into()));
        }
        self.data.split_ratios()?;
        self.model.validate().map_err(|e| RaceError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| RaceError::Config(e.to_string()))
    }

    pub fn cache_root(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }

    pub fn default_tree_cache(&self) -> PathBuf {
        self.cache_root().join("trees.jsonl")
    }

    pub fn embedding_dir(&self) -> PathBuf {
        self.cache_root().join("embeddings")
    }

    pub fn encoder_identity(&self) -> EncoderIdentity {
        match self.train.encoder {
            EncoderMode::Mock => EncoderIdentity {
                name: "mock".into(),
                revision: format!("v1-d{}-seed{}", self.model.d_plm, self.encoder.mock_seed),
                dim: self.model.d_plm,
            },
            EncoderMode::Real => EncoderIdentity {
                name: self.encoder.name.clone(),
                revision: self.encoder.revision.clone(),
                dim: self.model.d_plm,
            },
        }
    }
}
