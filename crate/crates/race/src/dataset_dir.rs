//! On-disk layout of a built dataset.
//!
//! ```text
//! corpus.jsonl            labelled records
//! manifest_<part>.jsonl   id, label, domain, group_id per partition
//! split.json              split mode, seed, ratios, warnings
//! stats.json / stats.txt  per-(domain, label) partition counts
//! exclusions.jsonl        records that could not be labelled, with reasons
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use race_core::dataset::{
    Domain, Exclusion, Label, Partition, Record, SplitAssignment, SplitStats, SplitWarning, StatRow,
};
use race_core::train::SplitMode;
use serde::{Deserialize, Serialize};

use crate::{jsonl, RaceError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub domain: Domain,
    pub group_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub mode: SplitMode,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub warnings: Vec<SplitWarning>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsFile {
    pub rows: Vec<StatRow>,
    /// `[train, val, test, total]`
    pub totals: [usize; 4],
}

impl StatsFile {
    pub fn from_stats(stats: &SplitStats) -> Self {
        let [a, b, c] = stats.totals();
        StatsFile { rows: stats.rows(), totals: [a, b, c, a + b + c] }
    }

    pub fn cell(&self, domain: Domain, label: Label) -> Option<[usize; 3]> {
        self.rows.iter().find(|r| r.domain == domain && r.label == label).map(|r| [r.train, r.val, r.test])
    }
}

/// Plain-text table with one row per (domain, label) and a total row.
pub fn stats_table(stats: &StatsFile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:<14} {:>7} {:>7} {:>7} {:>7}", "Domain", "Label", "Train", "Val", "Test", "Total");
    for r in &stats.rows {
        let _ = writeln!(
            s,
            "{:<8} {:<14} {:>7} {:>7} {:>7} {:>7}",
            r.domain.name(),
            r.label.name(),
            r.train,
            r.val,
            r.test,
            r.total
        );
    }
    let [a, b, c, t] = stats.totals;
    let _ = writeln!(s, "{:<23} {a:>7} {b:>7} {c:>7} {t:>7}", "Total");
    s
}

#[derive(Clone, Debug)]
pub struct DatasetDir {
    root: PathBuf,
}

impl DatasetDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn manifest_path(&self, part: Partition) -> PathBuf {
        self.root.join(format!("manifest_{}.jsonl", part.name()))
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    pub fn write(
        &self,
        records: &[Record],
        split: &SplitAssignment,
        meta: &SplitMeta,
        exclusions: &[Exclusion],
    ) -> Result<StatsFile> {
        jsonl::write(&self.corpus_path(), records)?;
        for part in Partition::ALL {
            let entries = records.iter().filter(|r| split.get(&r.id) == Some(part)).map(|r| ManifestEntry {
                id: r.id.clone(),
                label: r.label,
                domain: r.domain,
                group_id: r.group_id.clone(),
            });
            jsonl::write(&self.manifest_path(part), entries)?;
        }
        jsonl::write_json(&self.root.join("split.json"), meta)?;
        jsonl::write(&self.root.join("exclusions.jsonl"), exclusions)?;
        let stats = StatsFile::from_stats(&SplitStats::compute(records, split));
        jsonl::write_json(&self.stats_path(), &stats)?;
        jsonl::write_text(&self.root.join("stats.txt"), &stats_table(&stats))?;
        Ok(stats)
    }

    pub fn records(&self) -> Result<Vec<Record>> {
        let p = self.corpus_path();
        if !p.exists() {
            return Err(RaceError::Missing(format!("dataset corpus {}", p.display())));
        }
        jsonl::read(&p)
    }

    /// Records by id.
    pub fn record_map(&self) -> Result<BTreeMap<String, Record>> {
        Ok(self.records()?.into_iter().map(|r| (r.id.clone(), r)).collect())
    }

    pub fn manifest(&self, part: Partition) -> Result<Vec<ManifestEntry>> {
        let p = self.manifest_path(part);
        if !p.exists() {
            return Err(RaceError::Missing(format!("manifest {}", p.display())));
        }
        jsonl::read(&p)
    }

    pub fn stats(&self) -> Result<StatsFile> {
        jsonl::read_json(&self.stats_path())
    }
}
