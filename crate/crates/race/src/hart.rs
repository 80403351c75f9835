//! Loader for HART-style raw records.
//!
//! Accepts a single file or a directory searched recursively for `.json`
//! (array) and `.jsonl` files. Every entry needs an `id`; `text`,
//! `content_source`, `language_source` and `domain` are optional. Files are
//! read in path order so the record order is stable.

use std::path::{Path, PathBuf};

use race_core::dataset::RawRecord;
use walkdir::WalkDir;

use crate::{jsonl, RaceError, Result};

pub fn raw_files(root: &Path) -> Result<Vec<PathBuf>> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    if !root.is_dir() {
        return Err(RaceError::Missing(format!("raw data at {}", root.display())));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| RaceError::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
            source: e.into(),
        })?;
        let p = entry.path();
        if entry.file_type().is_file() && matches!(p.extension().and_then(|s| s.to_str()), Some("json" | "jsonl")) {
            files.push(p.to_path_buf());
        }
    }
    Ok(files)
}

pub fn load_raw(root: &Path) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for f in raw_files(root)? {
        let records: Vec<RawRecord> = jsonl::read_any(&f)?;
        log::debug!("{}: {} raw records", f.display(), records.len());
        out.extend(records);
    }
    Ok(out)
}
