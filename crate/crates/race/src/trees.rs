//! The tree cache: one tree record per line, keyed by `doc_id`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use race_core::rst::{load_tree, TreeRecord};
use race_core::RstTree;

use crate::{jsonl, RaceError, Result};

#[derive(Clone, Debug)]
pub struct TreeCache {
    path: PathBuf,
}

impl TreeCache {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TreeCache { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn records(&self) -> Result<Vec<TreeRecord>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        jsonl::read(&self.path)
    }

    /// Document ids already cached.
    pub fn ids(&self) -> Result<BTreeSet<String>> {
        Ok(self.records()?.into_iter().map(|r| r.doc_id).collect())
    }

    /// All cached trees, validated. The last record wins if an id repeats.
    pub fn load(&self) -> Result<BTreeMap<String, RstTree>> {
        let mut out = BTreeMap::new();
        for (i, rec) in self.records()?.into_iter().enumerate() {
            let tree = load_tree(rec)
                .map_err(|e| RaceError::Format { path: self.path.clone(), line: i + 1, message: e.to_string() })?;
            out.insert(tree.doc_id().to_string(), tree);
        }
        Ok(out)
    }

    pub fn append(&self, trees: &[RstTree]) -> Result<()> {
        jsonl::append(&self.path, trees.iter().map(RstTree::to_record))
    }

    /// Make sure the cache file exists, even when empty.
    pub fn touch(&self) -> Result<()> {
        jsonl::append::<TreeRecord>(&self.path, [])
    }
}
