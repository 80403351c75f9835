//! Contextual token embeddings and EDU-to-token alignment.
//!
//! Encoders are reached through the [`Encoder`] trait. Documents longer than
//! the encoder window are embedded as overlapping chunks and stitched back
//! together (see [`chunk_windows`] and [`stitch_owners`]).

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::Mat;
use crate::rng::{hash64, splitmix};
use crate::rst::RstTree;

/// Tokens shared between neighbouring chunks.
pub const DEFAULT_CHUNK_OVERLAP: usize = 64;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("document has {tokens} tokens but the encoder window is {window}")]
    ContextOverflow { tokens: usize, window: usize },
    #[error("text is empty or has no tokens")]
    EmptyText,
    #[error("EDU {edu} maps to no token")]
    AlignmentGap { edu: usize },
    #[error("encoder returned {got} rows of width {width}, expected {expected} rows of width {dim}")]
    BadEncoderOutput { got: usize, width: usize, expected: usize, dim: usize },
    #[error("token offsets are not monotone or exceed the document")]
    BadOffsets,
}

/// A token's character interval `[start, end)` in the source document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddingMatrix {
    embeddings: Mat,
    offsets: Vec<Token>,
    gradients_flow: bool,
}

impl TokenEmbeddingMatrix {
    pub fn new(embeddings: Mat, offsets: Vec<Token>, gradients_flow: bool) -> Result<Self, EmbedError> {
        if embeddings.rows() == 0 || offsets.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        if embeddings.rows() != offsets.len() || !embeddings.is_finite() {
            return Err(EmbedError::BadEncoderOutput {
                got: embeddings.rows(),
                width: embeddings.cols(),
                expected: offsets.len(),
                dim: embeddings.cols(),
            });
        }
        if offsets.windows(2).any(|w| w[1].start < w[0].start) || offsets.iter().any(|t| t.end < t.start) {
            return Err(EmbedError::BadOffsets);
        }
        Ok(TokenEmbeddingMatrix { embeddings, offsets, gradients_flow })
    }

    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }

    pub fn offsets(&self) -> &[Token] {
        &self.offsets
    }

    pub fn num_tokens(&self) -> usize {
        self.offsets.len()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Whether the producing encoder has a trainable layer attached.
    pub fn gradients_flow(&self) -> bool {
        self.gradients_flow
    }
}

pub trait Encoder {
    fn name(&self) -> &str;
    fn revision(&self) -> &str;
    fn dim(&self) -> usize;
    /// Maximum number of tokens per [`encode`](Encoder::encode) call.
    fn window(&self) -> usize;
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, EmbedError>;
    /// Embed `tokens`, a contiguous run of the document's tokens starting at
    /// document token index `first_index`. Returns one row per token.
    fn encode(&self, text: &str, tokens: &[Token], first_index: usize) -> Result<Mat, EmbedError>;
    /// True when the encoder's final layer is being fine-tuned.
    fn gradients_flow(&self) -> bool {
        false
    }
}

/// Token windows `[start, end)` covering `0..num_tokens` with `overlap`
/// shared tokens between consecutive windows.
pub fn chunk_windows(num_tokens: usize, window: usize, overlap: usize) -> Vec<(usize, usize)> {
    assert!(window > overlap, "window must exceed overlap");
    if num_tokens <= window {
        return alloc::vec![(0, num_tokens)];
    }
    let stride = window - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(num_tokens);
        out.push((start, end));
        if end == num_tokens {
            break;
        }
        start += stride;
    }
    out
}

/// For every token, the index of the window whose row is kept.
///
/// A token inside several windows takes its row from the one where it sits
/// farthest from a chunk edge. Edges at the document's own start or end are
/// not cut points and count as infinitely far. Ties go to the earlier window.
pub fn stitch_owners(num_tokens: usize, windows: &[(usize, usize)]) -> Vec<usize> {
    let margin = |t: usize, (s, e): (usize, usize)| -> usize {
        let left = if s == 0 { usize::MAX } else { t - s };
        let right = if e == num_tokens { usize::MAX } else { e - 1 - t };
        left.min(right)
    };
    (0..num_tokens)
        .map(|t| {
            let mut best = usize::MAX;
            let mut best_margin = 0;
            for (w, &win) in windows.iter().enumerate() {
                if win.0 <= t && t < win.1 {
                    let m = margin(t, win);
                    if best == usize::MAX || m > best_margin {
                        best = w;
                        best_margin = m;
                    }
                }
            }
            best
        })
        .collect()
}

/// Embed a whole document.
///
/// With `overlap = Some(o)`, inputs longer than the encoder window are split
/// by [`chunk_windows`] and stitched; with `None` they fail with
/// [`EmbedError::ContextOverflow`].
pub fn embed_document(
    encoder: &dyn Encoder,
    text: &str,
    overlap: Option<usize>,
) -> Result<TokenEmbeddingMatrix, EmbedError> {
    if text.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let tokens = encoder.tokenize(text)?;
    if tokens.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let k = tokens.len();
    let window = encoder.window();
    let windows = match overlap {
        _ if k <= window => alloc::vec![(0, k)],
        Some(o) if o < window => chunk_windows(k, window, o),
        _ => return Err(EmbedError::ContextOverflow { tokens: k, window }),
    };
    let dim = encoder.dim();
    let mut chunks = Vec::with_capacity(windows.len());
    for &(s, e) in &windows {
        let rows = encoder.encode(text, &tokens[s..e], s)?;
        if rows.rows() != e - s || rows.cols() != dim {
            return Err(EmbedError::BadEncoderOutput { got: rows.rows(), width: rows.cols(), expected: e - s, dim });
        }
        chunks.push(rows);
    }
    let owners = stitch_owners(k, &windows);
    let mut out = Mat::zeros(k, dim);
    for (t, &w) in owners.iter().enumerate() {
        let local = t - windows[w].0;
        out.row_mut(t).copy_from_slice(chunks[w].row(local));
    }
    TokenEmbeddingMatrix::new(out, tokens, encoder.gradients_flow())
}

/// Whitespace/punctuation tokenizer: maximal alphanumeric runs are tokens,
/// every other non-space character is a token of its own.
pub fn simple_tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        if c.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(i);
            }
            continue;
        }
        if let Some(s) = run_start.take() {
            out.push(Token { start: s, end: i });
        }
        if !c.is_whitespace() {
            out.push(Token { start: i, end: i + 1 });
        }
    }
    if let Some(s) = run_start {
        out.push(Token { start: s, end: n });
    }
    out
}

/// Deterministic unit vector for `(token, position)` under `seed`.
pub fn mock_row(token: &str, position: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut state = hash64(token.as_bytes(), seed) ^ splitmix(position as u64 ^ 0x5eed);
    let mut row: Vec<f64> = (0..dim)
        .map(|_| {
            state = splitmix(state);
            // uniform in [-1, 1)
            ((state >> 11) as f64 / (1u64 << 52) as f64) - 1.0
        })
        .collect();
    let norm = crate::linalg::norm(&row);
    if norm > 0.0 {
        row.iter_mut().for_each(|x| *x /= norm);
    } else {
        row[0] = 1.0;
    }
    row
}

/// Hash-based embedder for CPU-only tests; no model is touched.
#[derive(Clone, Debug)]
pub struct MockEncoder {
    pub dim: usize,
    pub seed: u64,
    pub window: usize,
}

impl MockEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "mock embedding width must be >= 1");
        MockEncoder { dim, seed, window: 512 }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }
}

impl Encoder for MockEncoder {
    fn name(&self) -> &str {
        "mock"
    }

    fn revision(&self) -> &str {
        "v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn window(&self) -> usize {
        self.window
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, EmbedError> {
        Ok(simple_tokenize(text))
    }

    fn encode(&self, text: &str, tokens: &[Token], first_index: usize) -> Result<Mat, EmbedError> {
        let mut m = Mat::zeros(tokens.len(), self.dim);
        for (i, t) in tokens.iter().enumerate() {
            let s = crate::rst::slice_chars(text, t.start, t.end);
            m.row_mut(i).copy_from_slice(&mock_row(s, first_index + i, self.dim, self.seed));
        }
        Ok(m)
    }
}

/// Embed `text` with the mock encoder, without a window limit.
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> Result<TokenEmbeddingMatrix, EmbedError> {
    let enc = MockEncoder::new(dim, seed).with_window(usize::MAX);
    embed_document(&enc, text, None)
}

/// Inclusive token index range per EDU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAlignment {
    pub ranges: Vec<(usize, usize)>,
}

/// Map each EDU of `tree` to the tokens it owns.
///
/// A token belongs to the EDU containing its start offset, so a token cut by
/// an EDU boundary goes to the left EDU and ranges never overlap. An EDU that
/// owns no token (whitespace-only span) borrows the nearest preceding token,
/// or the first following one when nothing precedes it.
pub fn align_spans(tree: &RstTree, emb: &TokenEmbeddingMatrix) -> Result<SpanAlignment, EmbedError> {
    let tokens = emb.offsets();
    let doc_len = tree.document().chars().count();
    if tokens.iter().any(|t| t.end > doc_len) {
        return Err(EmbedError::BadOffsets);
    }
    let mut ranges = Vec::with_capacity(tree.num_leaves());
    for (i, e) in tree.edus().iter().enumerate() {
        // tokens are sorted by start, so owned tokens form a contiguous run
        let first = tokens.partition_point(|t| t.start < e.start);
        let past = tokens.partition_point(|t| t.start < e.end);
        let range = if first < past {
            (first, past - 1)
        } else if first > 0 {
            (first - 1, first - 1)
        } else if first < tokens.len() {
            (first, first)
        } else {
            return Err(EmbedError::AlignmentGap { edu: i });
        };
        ranges.push(range);
    }
    Ok(SpanAlignment { ranges })
}
