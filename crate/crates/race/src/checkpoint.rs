//! Versioned checkpoint container.
//!
//! JSON with exact float round-tripping, so a saved and reloaded model
//! scores bit-for-bit like the in-memory one.

use std::path::Path;

use race_core::train::EpochRecord;
use race_core::{ModelConfig, ModelParams};
use serde::{Deserialize, Serialize};

use crate::config::EncoderIdentity;
use crate::{jsonl, RaceError, Result};

pub const FORMAT: &str = "race-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub encoder: EncoderIdentity,
    pub seed: u64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(
        model: ModelConfig,
        encoder: EncoderIdentity,
        seed: u64,
        best_epoch: usize,
        history: Vec<EpochRecord>,
        params: ModelParams,
    ) -> Self {
        Checkpoint { format: FORMAT.into(), version: VERSION, model, encoder, seed, best_epoch, history, params }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self)
            .map_err(|e| RaceError::Format { path: path.to_path_buf(), line: 0, message: e.to_string() })?;
        text.push('\n');
        jsonl::write_text(path, &text)
    }

    /// Load and check the container's own consistency.
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = jsonl::read_json(path)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(RaceError::Mismatch(format!(
                "{}: format {} v{}, expected {FORMAT} v{VERSION}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        ck.params.check_shapes(&ck.model).map_err(|e| RaceError::Mismatch(format!("{}: {e}", path.display())))?;
        Ok(ck)
    }

    /// Load, refusing a checkpoint built for another model or encoder.
    pub fn load_matching(path: &Path, model: &ModelConfig, encoder: &EncoderIdentity) -> Result<Self> {
        let ck = Self::load(path)?;
        if &ck.model != model {
            return Err(RaceError::Mismatch(format!(
                "{}: model config differs (checkpoint {:?}, run {:?})",
                path.display(),
                ck.model,
                model
            )));
        }
        if &ck.encoder != encoder {
            return Err(RaceError::Mismatch(format!(
                "{}: encoder {:?}, run uses {:?}",
                path.display(),
                ck.encoder,
                encoder
            )));
        }
        Ok(ck)
    }
}
