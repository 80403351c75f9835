//! Per-document embedding cache.
//!
//! Blobs live under `<dir>/<aa>/<sha256 hex>.bin`, keyed by the SHA-256 of
//! `doc_id`, encoder name and revision. Layout, little-endian:
//!
//! ```text
//! magic    8 bytes  "RACEEMB\x01"
//! rows     u64
//! cols     u64
//! grad     u8       1 if the encoder was being fine-tuned
//! offsets  rows x (u64 start, u64 end)
//! values   rows x cols f64
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use race_core::embed::{embed_document, Encoder, Token, TokenEmbeddingMatrix};
use race_core::linalg::Mat;
use sha2::{Digest, Sha256};

use crate::config::EncoderIdentity;
use crate::{RaceError, Result};

const MAGIC: &[u8; 8] = b"RACEEMB\x01";

pub fn cache_key(doc_id: &str, identity: &EncoderIdentity) -> String {
    let mut h = Sha256::new();
    for part in [doc_id, &identity.name, &identity.revision] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn encode_blob(m: &TokenEmbeddingMatrix) -> Vec<u8> {
    let (rows, cols) = m.embeddings().shape();
    let mut out = Vec::with_capacity(25 + rows * 16 + rows * cols * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out.push(m.gradients_flow() as u8);
    for t in m.offsets() {
        out.extend_from_slice(&(t.start as u64).to_le_bytes());
        out.extend_from_slice(&(t.end as u64).to_le_bytes());
    }
    for v in m.embeddings().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_blob(bytes: &[u8]) -> Option<TokenEmbeddingMatrix> {
    let mut rest = bytes.strip_prefix(MAGIC.as_slice())?;
    let mut take_u64 = || -> Option<u64> {
        let (head, tail) = rest.split_first_chunk::<8>()?;
        rest = tail;
        Some(u64::from_le_bytes(*head))
    };
    let rows = usize::try_from(take_u64()?).ok()?;
    let cols = usize::try_from(take_u64()?).ok()?;
    let (&grad, tail) = rest.split_first()?;
    rest = tail;
    let need = rows.checked_mul(16)?.checked_add(rows.checked_mul(cols)?.checked_mul(8)?)?;
    if rest.len() != need {
        return None;
    }
    let (offs, vals) = rest.split_at(rows * 16);
    let word = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8-byte chunk"));
    let offsets: Vec<Token> =
        offs.chunks_exact(16).map(|c| Token { start: word(&c[..8]) as usize, end: word(&c[8..]) as usize }).collect();
    let values: Vec<f64> = vals.chunks_exact(8).map(|c| f64::from_bits(word(c))).collect();
    TokenEmbeddingMatrix::new(Mat::from_vec(rows, cols, values), offsets, grad == 1).ok()
}

#[derive(Clone, Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        EmbeddingCache { dir: dir.into() }
    }

    pub fn path_for(&self, doc_id: &str, identity: &EncoderIdentity) -> PathBuf {
        let key = cache_key(doc_id, identity);
        self.dir.join(&key[..2]).join(format!("{key}.bin"))
    }

    /// Cached embeddings, if present, readable and of the expected width.
    pub fn get(&self, doc_id: &str, identity: &EncoderIdentity) -> Option<TokenEmbeddingMatrix> {
        let bytes = fs::read(self.path_for(doc_id, identity)).ok()?;
        decode_blob(&bytes).filter(|m| m.dim() == identity.dim)
    }

    pub fn put(&self, doc_id: &str, identity: &EncoderIdentity, m: &TokenEmbeddingMatrix) -> Result<()> {
        let path = self.path_for(doc_id, identity);
        crate::jsonl::ensure_parent(&path)?;
        // write then rename so an interrupted run never leaves a torn blob
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, encode_blob(m)).map_err(RaceError::io(&tmp))?;
        fs::rename(&tmp, &path).map_err(RaceError::io(&path))
    }

    pub fn get_or_embed(
        &self,
        doc_id: &str,
        text: &str,
        encoder: &dyn Encoder,
        identity: &EncoderIdentity,
        overlap: usize,
    ) -> Result<TokenEmbeddingMatrix> {
        if let Some(m) = self.get(doc_id, identity) {
            return Ok(m);
        }
        let m = embed_document(encoder, text, Some(overlap)).map_err(|e| RaceError::doc(doc_id, e))?;
        self.put(doc_id, identity, &m)?;
        Ok(m)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
