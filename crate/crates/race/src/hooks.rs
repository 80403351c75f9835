//! Subprocess hooks for the external RST parser and text encoder.
//!
//! Each call runs the configured command once, writes one JSON request to
//! its stdin and reads one JSON response from its stdout. A nonzero exit
//! status or malformed response is a failure of that call only.
//!
//! Parser: request `{"doc_id", "text"}`, response a tree record
//! (`{doc_id, text, edus, internals, root_id | roots, nuclearity?, truncated?}`).
//!
//! Encoder: request `{"op": "tokenize", "text"}`, response
//! `{"tokens": [[start, end], ...]}` in character offsets; request
//! `{"op": "encode", "text", "tokens", "first_index"}`, response
//! `{"embeddings": [[f64; dim], ...]}` with one row per token.

use std::io::Write;
use std::process::{Command, Stdio};

use race_core::embed::{EmbedError, Encoder, Token};
use race_core::linalg::Mat;
use race_core::rst::{load_tree, TreeRecord};
use race_core::segment::fallback_segment;
use race_core::RstTree;
use serde::{Deserialize, Serialize};

use crate::{RaceError, Result};

/// Run `command` with `request` on stdin and return its stdout.
pub fn run_hook(command: &[String], request: &[u8]) -> Result<Vec<u8>> {
    let display = command.join(" ");
    let fail = |message: String| RaceError::Hook { command: display.clone(), message };
    let (program, args) = command.split_first().ok_or_else(|| fail("empty command".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| fail(format!("spawn: {e}")))?;
    {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // a hook that exits without reading its input is reported by status below
        let _ = stdin.write_all(request);
    }
    let out = child.wait_with_output().map_err(|e| fail(format!("wait: {e}")))?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        return Err(fail(format!("{} {}", out.status, stderr.trim())));
    }
    Ok(out.stdout)
}

fn call<Req: Serialize, Resp: for<'de> Deserialize<'de>>(command: &[String], request: &Req) -> Result<Resp> {
    let body = serde_json::to_vec(request).expect("requests serialize");
    let out = run_hook(command, &body)?;
    serde_json::from_slice(&out)
        .map_err(|e| RaceError::Hook { command: command.join(" "), message: format!("bad response: {e}") })
}

/// Where trees come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Parser {
    /// Sentence-level right-branching fallback segmenter.
    Fallback,
    Command(Vec<String>),
}

#[derive(Serialize)]
struct ParseRequest<'a> {
    doc_id: &'a str,
    text: &'a str,
}

impl Parser {
    pub fn from_command(command: &[String]) -> Self {
        if command.is_empty() {
            Parser::Fallback
        } else {
            Parser::Command(command.to_vec())
        }
    }

    pub fn parse(&self, doc_id: &str, text: &str) -> Result<RstTree> {
        match self {
            Parser::Fallback => fallback_segment(doc_id, text).map_err(|e| RaceError::doc(doc_id, e)),
            Parser::Command(cmd) => {
                let rec: TreeRecord = call(cmd, &ParseRequest { doc_id, text })?;
                if rec.doc_id != doc_id {
                    return Err(RaceError::doc(doc_id, format!("parser answered for {}", rec.doc_id)));
                }
                load_tree(rec).map_err(|e| RaceError::doc(doc_id, e))
            }
        }
    }
}

/// Encoder reached through a subprocess hook. Its embeddings are frozen.
#[derive(Clone, Debug)]
pub struct SubprocessEncoder {
    pub command: Vec<String>,
    pub name: String,
    pub revision: String,
    pub dim: usize,
    pub window: usize,
}

#[derive(Serialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum EncodeRequest<'a> {
    Tokenize { text: &'a str },
    Encode { text: &'a str, tokens: Vec<(usize, usize)>, first_index: usize },
}

#[derive(Deserialize)]
struct TokenizeResponse {
    tokens: Vec<(usize, usize)>,
}

#[derive(Deserialize)]
struct EncodeResponse {
    embeddings: Vec<Vec<f64>>,
}

fn unavailable(e: RaceError) -> EmbedError {
    EmbedError::EncoderUnavailable(e.to_string())
}

impl Encoder for SubprocessEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn revision(&self) -> &str {
        &self.revision
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn window(&self) -> usize {
        self.window
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, EmbedError> {
        let resp: TokenizeResponse = call(&self.command, &EncodeRequest::Tokenize { text }).map_err(unavailable)?;
        Ok(resp.tokens.into_iter().map(|(start, end)| Token { start, end }).collect())
    }

    fn encode(&self, text: &str, tokens: &[Token], first_index: usize) -> Result<Mat, EmbedError> {
        let req = EncodeRequest::Encode { text, tokens: tokens.iter().map(|t| (t.start, t.end)).collect(), first_index };
        let resp: EncodeResponse = call(&self.command, &req).map_err(unavailable)?;
        let width = resp.embeddings.first().map_or(0, Vec::len);
        if resp.embeddings.len() != tokens.len() || resp.embeddings.iter().any(|r| r.len() != self.dim) {
            return Err(EmbedError::BadEncoderOutput {
                got: resp.embeddings.len(),
                width,
                expected: tokens.len(),
                dim: self.dim,
            });
        }
        Ok(Mat::from_rows(&resp.embeddings))
    }
}
