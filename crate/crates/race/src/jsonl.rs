//! Line-delimited JSON and plain JSON files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{RaceError, Result};

/// Every non-blank line of `path`, parsed.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(RaceError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(RaceError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| RaceError::Format { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(value);
    }
    Ok(out)
}

/// A JSON array file or a JSONL file, whichever `path` holds.
pub fn read_any<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(RaceError::io(path))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text)
            .map_err(|e| RaceError::Format { path: path.to_path_buf(), line: e.line(), message: e.to_string() });
    }
    read(path)
}

/// Overwrite `path` with one line per item.
pub fn write<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(RaceError::io(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        write_line(&mut w, path, &item)?;
    }
    w.flush().map_err(RaceError::io(path))
}

/// Append one line per item, creating `path` if needed.
pub fn append<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    ensure_parent(path)?;
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(RaceError::io(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        write_line(&mut w, path, &item)?;
    }
    w.flush().map_err(RaceError::io(path))
}

fn write_line<T: Serialize>(w: &mut impl Write, path: &Path, item: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, item)
        .map_err(|e| RaceError::Format { path: path.to_path_buf(), line: 0, message: e.to_string() })?;
    w.write_all(b"\n").map_err(RaceError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(RaceError::io(path))?;
    serde_json::from_str(&text)
        .map_err(|e| RaceError::Format { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| RaceError::Format { path: path.to_path_buf(), line: 0, message: e.to_string() })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(RaceError::io(path))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(RaceError::io(p)),
        _ => Ok(()),
    }
}
