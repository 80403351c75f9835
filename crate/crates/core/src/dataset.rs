//! Four-class corpus reconstruction and split regimes.
//!
//! Labels come from HART-style record ids and provenance tags:
//!
//! | id prefix   | provenance                                   | label          |
//! |-------------|----------------------------------------------|----------------|
//! | `hum/gen/`  | `language_source` = `humanize:human`/`:tool` | Humanized      |
//! | `hum/gen/`  | `language_source` names an LLM reviser       | LLM-Generated  |
//! | `rep/`      | `language_source` = `rephrase:...`           | LLM-Polished   |
//! | `gen/`      | `content_source` = `machine:...`             | LLM-Generated  |
//! | none        |                                              | Human-Written  |
//!
//! Prefixes are tested longest first. Anything else is unmappable and is
//! excluded rather than guessed.
//!
//! All shuffles use [`SeededRng`] keyed by the caller's seed.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    Arxiv,
    Essay,
    News,
    Writing,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Arxiv, Domain::Essay, Domain::News, Domain::Writing];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Arxiv => "Arxiv",
            Domain::Essay => "Essay",
            Domain::News => "News",
            Domain::Writing => "Writing",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = DatasetError;

    /// Case-insensitive; also accepts names that start with a domain
    /// (`writing_prompts`, `news-2024`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Domain::ALL
            .iter()
            .find(|d| lower.starts_with(&d.name().to_ascii_lowercase()))
            .copied()
            .ok_or_else(|| DatasetError::UnknownDomain(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    HumanWritten,
    LlmPolished,
    LlmGenerated,
    Humanized,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::HumanWritten, Label::LlmPolished, Label::LlmGenerated, Label::Humanized];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::HumanWritten => "Human-Written",
            Label::LlmPolished => "LLM-Polished",
            Label::LlmGenerated => "LLM-Generated",
            Label::Humanized => "Humanized",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect();
        match key.as_str() {
            "humanwritten" | "human" => Ok(Label::HumanWritten),
            "llmpolished" | "polished" => Ok(Label::LlmPolished),
            "llmgenerated" | "generated" => Ok(Label::LlmGenerated),
            "humanized" => Ok(Label::Humanized),
            _ => Err(DatasetError::UnknownLabel(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("record {id} cannot be labelled: {reason}")]
    UnmappableRecord { id: String, reason: String },
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("split ratios must be non-negative and sum to 1")]
    BadRatios,
    #[error("duplicate record id {0}")]
    DuplicateId(String),
}

/// A labelled corpus entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    pub domain: Domain,
    pub label: Label,
    pub group_id: String,
    #[serde(default)]
    pub content_source: String,
    #[serde(default)]
    pub language_source: String,
}

/// An unlabelled input record as found in the raw benchmark files.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub content_source: Option<String>,
    #[serde(default)]
    pub language_source: Option<String>,
    #[serde(default)]
    pub domain: Option<String>,
}

const HUMANIZED_PREFIX: &str = "hum/gen/";
const POLISHED_PREFIX: &str = "rep/";
const GENERATED_PREFIX: &str = "gen/";

/// Agent names treated as an LLM when they appear after `verb:` in a
/// provenance tag.
const LLM_AGENTS: &[&str] = &[
    "gpt", "chatgpt", "openai", "claude", "anthropic", "gemini", "gemma", "palm", "bard", "llama", "qwen", "mistral",
    "mixtral", "deepseek", "phi", "yi", "glm", "chatglm", "command", "cohere", "falcon", "vicuna", "llm", "machine",
];

fn tag_agent(tag: &str) -> Option<(&str, &str)> {
    let (verb, agent) = tag.split_once(':')?;
    Some((verb.trim(), agent.trim()))
}

fn is_llm_agent(agent: &str) -> bool {
    let a = agent.to_ascii_lowercase();
    !a.is_empty() && LLM_AGENTS.iter().any(|p| a.starts_with(p))
}

/// Label for a record from its id and provenance tags.
pub fn map_hart_label(id: &str, content_source: &str, language_source: &str) -> Result<Label, DatasetError> {
    let unmappable = |reason: &str| DatasetError::UnmappableRecord { id: id.to_string(), reason: reason.to_string() };
    if id.starts_with(HUMANIZED_PREFIX) {
        return match tag_agent(language_source) {
            Some(("humanize", "human" | "tool")) => Ok(Label::Humanized),
            Some((_, agent)) if is_llm_agent(agent) => Ok(Label::LlmGenerated),
            _ => Err(unmappable("hum/gen/ record whose language_source is neither humanize:human|tool nor an LLM reviser")),
        };
    }
    if id.starts_with("hum/") {
        return Err(unmappable("hum/ prefix without gen/"));
    }
    if id.starts_with(POLISHED_PREFIX) {
        return match tag_agent(language_source) {
            Some(("rephrase", _)) => Ok(Label::LlmPolished),
            _ => Err(unmappable("rep/ record without a rephrase: language_source")),
        };
    }
    if id.starts_with(GENERATED_PREFIX) {
        return match tag_agent(content_source) {
            Some(("machine", _)) => Ok(Label::LlmGenerated),
            _ => Err(unmappable("gen/ record without a machine: content_source")),
        };
    }
    Ok(Label::HumanWritten)
}

/// Base-text identifier: the id with its derivative prefix removed.
pub fn group_id(id: &str) -> &str {
    for p in [HUMANIZED_PREFIX, POLISHED_PREFIX, GENERATED_PREFIX] {
        if let Some(rest) = id.strip_prefix(p) {
            return rest;
        }
    }
    id
}

/// Domain from an explicit field, else from the first path segment of the
/// base id.
pub fn infer_domain(id: &str, explicit: Option<&str>) -> Result<Domain, DatasetError> {
    if let Some(d) = explicit.filter(|d| !d.is_empty()) {
        return d.parse();
    }
    let base = group_id(id);
    let first = base.split(['/', ':', '-', '_']).next().unwrap_or(base);
    first.parse()
}

pub fn label_record(raw: &RawRecord) -> Result<Record, DatasetError> {
    let content_source = raw.content_source.clone().unwrap_or_default();
    let language_source = raw.language_source.clone().unwrap_or_default();
    let label = map_hart_label(&raw.id, &content_source, &language_source)?;
    let domain = infer_domain(&raw.id, raw.domain.as_deref()).map_err(|_| DatasetError::UnmappableRecord {
        id: raw.id.clone(),
        reason: "no recognisable domain".into(),
    })?;
    Ok(Record {
        id: raw.id.clone(),
        text: raw.text.clone(),
        domain,
        label,
        group_id: group_id(&raw.id).to_string(),
        content_source,
        language_source,
    })
}

/// Record excluded during reconstruction, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

/// Label every raw record; unmappable and duplicate ids are excluded and
/// reported, never guessed.
pub fn build_corpus(raws: &[RawRecord]) -> (Vec<Record>, Vec<Exclusion>) {
    let mut seen = BTreeMap::new();
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for raw in raws {
        if seen.insert(raw.id.clone(), ()).is_some() {
            excluded.push(Exclusion { id: raw.id.clone(), reason: "duplicate id".into() });
            continue;
        }
        match label_record(raw) {
            Ok(r) => records.push(r),
            Err(DatasetError::UnmappableRecord { id, reason }) => {
                log::warn!("excluding {id}: {reason}");
                excluded.push(Exclusion { id, reason });
            }
            Err(e) => excluded.push(Exclusion { id: raw.id.clone(), reason: e.to_string() }),
        }
    }
    (records, excluded)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    /// 70/10/20, the partition sizes of the resplit benchmark.
    pub const HART: SplitRatios = SplitRatios { train: 0.7, val: 0.1, test: 0.2 };
    /// 9:1 train/validation on the in-domain remainder.
    pub const LODO: SplitRatios = SplitRatios { train: 0.9, val: 0.1, test: 0.0 };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DatasetError> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p >= 0.0)) || libm::fabs(parts.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(DatasetError::BadRatios);
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Split `n` items by largest remainder: floors first, leftover items go to
/// the parts with the largest fractional share (earlier part on ties).
pub fn allocate(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let r = ratios.as_array();
    let raw: [f64; 3] = [n as f64 * r[0], n as f64 * r[1], n as f64 * r[2]];
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = libm::floor(raw[i] + 1e-9) as usize;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = raw[a] - counts[a] as f64;
        let fb = raw[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if r[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitWarning {
    /// A (domain, label) cell with no records.
    EmptyCell { domain: Domain, label: Label },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Partition>,
    pub warnings: Vec<SplitWarning>,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Partition> {
        self.assignment.get(id).copied()
    }

    pub fn ids(&self, part: Partition) -> impl Iterator<Item = &str> {
        self.assignment.iter().filter(move |(_, &p)| p == part).map(|(id, _)| id.as_str())
    }

    pub fn count(&self, part: Partition) -> usize {
        self.ids(part).count()
    }
}

fn check_unique(records: &[Record]) -> Result<(), DatasetError> {
    let mut seen = BTreeMap::new();
    for r in records {
        if seen.insert(r.id.as_str(), ()).is_some() {
            return Err(DatasetError::DuplicateId(r.id.clone()));
        }
    }
    Ok(())
}

fn empty_cell_warnings(records: &[Record], domains: &[Domain]) -> Vec<SplitWarning> {
    let mut out = Vec::new();
    for &domain in domains {
        for label in Label::ALL {
            if !records.iter().any(|r| r.domain == domain && r.label == label) {
                log::warn!("empty cell {domain}/{label}");
                out.push(SplitWarning::EmptyCell { domain, label });
            }
        }
    }
    out
}

fn present_domains(records: &[Record]) -> Vec<Domain> {
    let mut d: Vec<Domain> = records.iter().map(|r| r.domain).collect();
    d.sort();
    d.dedup();
    d
}

/// Assign `units` (already sorted) to partitions after a seeded shuffle.
fn assign_units<'a>(units: &mut Vec<&'a str>, ratios: &SplitRatios, rng: &mut SeededRng) -> Vec<(&'a str, Partition)> {
    rng.shuffle(units);
    let [n_train, n_val, _] = allocate(units.len(), ratios);
    units
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let p = if i < n_train {
                Partition::Train
            } else if i < n_train + n_val {
                Partition::Val
            } else {
                Partition::Test
            };
            (u, p)
        })
        .collect()
}

/// Stratified split: every (domain, label) cell is shuffled and cut by
/// [`allocate`], so each cell's partition sizes are within one record of
/// the ideal proportions.
pub fn stratified_split(records: &[Record], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, DatasetError> {
    ratios.validate()?;
    check_unique(records)?;
    let mut cells: BTreeMap<(Domain, Label), Vec<&str>> = BTreeMap::new();
    for r in records {
        cells.entry((r.domain, r.label)).or_default().push(&r.id);
    }
    let mut rng = SeededRng::new(seed);
    let mut out = SplitAssignment { warnings: empty_cell_warnings(records, &present_domains(records)), ..Default::default() };
    for ids in cells.values_mut() {
        ids.sort_unstable();
        for (id, p) in assign_units(ids, &ratios, &mut rng) {
            out.assignment.insert(id.to_string(), p);
        }
    }
    Ok(out)
}

/// Group-aware split: all records sharing a `group_id` land in one
/// partition. Groups are stratified by domain (a group's domain is that of
/// its lexicographically first record).
pub fn group_aware_split(records: &[Record], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, DatasetError> {
    ratios.validate()?;
    check_unique(records)?;
    let mut members: BTreeMap<&str, Vec<&Record>> = BTreeMap::new();
    for r in records {
        members.entry(r.group_id.as_str()).or_default().push(r);
    }
    let mut by_domain: BTreeMap<Domain, Vec<&str>> = BTreeMap::new();
    for (gid, rs) in &members {
        let first = rs.iter().min_by(|a, b| a.id.cmp(&b.id)).expect("non-empty group");
        by_domain.entry(first.domain).or_default().push(gid);
    }
    let mut rng = SeededRng::new(seed);
    let mut out = SplitAssignment { warnings: empty_cell_warnings(records, &present_domains(records)), ..Default::default() };
    for groups in by_domain.values_mut() {
        for (gid, p) in assign_units(groups, &ratios, &mut rng) {
            for r in &members[gid] {
                out.assignment.insert(r.id.clone(), p);
            }
        }
    }
    Ok(out)
}

/// Out-of-domain protocol: the held-out domain is the test set; the other
/// domains are split 9:1 into train and validation, stratified by cell.
pub fn leave_one_domain_out(records: &[Record], held_out: Domain, seed: u64) -> Result<SplitAssignment, DatasetError> {
    check_unique(records)?;
    let rest: Vec<Record> = records.iter().filter(|r| r.domain != held_out).cloned().collect();
    let mut out = stratified_split(&rest, SplitRatios::LODO, seed)?;
    for r in records.iter().filter(|r| r.domain == held_out) {
        out.assignment.insert(r.id.clone(), Partition::Test);
    }
    out.warnings.extend(empty_cell_warnings(records, &[held_out]));
    Ok(out)
}

/// One row of the statistics table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatRow {
    pub domain: Domain,
    pub label: Label,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub total: usize,
}

/// Per-(domain, label) partition counts, laid out like the benchmark
/// statistics table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitStats {
    /// `cells[(domain, label)] = [train, val, test]`
    pub cells: BTreeMap<(Domain, Label), [usize; 3]>,
}

impl SplitStats {
    pub fn compute(records: &[Record], split: &SplitAssignment) -> Self {
        let mut cells: BTreeMap<(Domain, Label), [usize; 3]> = BTreeMap::new();
        for r in records {
            if let Some(p) = split.get(&r.id) {
                cells.entry((r.domain, r.label)).or_default()[p.index()] += 1;
            }
        }
        SplitStats { cells }
    }

    pub fn cell(&self, domain: Domain, label: Label) -> [usize; 3] {
        self.cells.get(&(domain, label)).copied().unwrap_or_default()
    }

    /// Rows for every domain present, all four labels each, in table order.
    pub fn rows(&self) -> Vec<StatRow> {
        let mut domains: Vec<Domain> = self.cells.keys().map(|(d, _)| *d).collect();
        domains.dedup();
        let mut out = Vec::new();
        for domain in domains {
            for label in Label::ALL {
                let [train, val, test] = self.cell(domain, label);
                out.push(StatRow { domain, label, train, val, test, total: train + val + test });
            }
        }
        out
    }

    pub fn totals(&self) -> [usize; 3] {
        let mut t = [0; 3];
        for c in self.cells.values() {
            for i in 0..3 {
                t[i] += c[i];
            }
        }
        t
    }
}

/// Published per-cell counts of the resplit benchmark, `[train, val, test]`.
pub const HART_TABLE: [(Domain, Label, [usize; 3]); 16] = [
    (Domain::Arxiv, Label::HumanWritten, [700, 100, 200]),
    (Domain::Arxiv, Label::LlmPolished, [700, 100, 200]),
    (Domain::Arxiv, Label::LlmGenerated, [1229, 174, 352]),
    (Domain::Arxiv, Label::Humanized, [172, 25, 48]),
    (Domain::Essay, Label::HumanWritten, [700, 100, 200]),
    (Domain::Essay, Label::LlmPolished, [700, 100, 200]),
    (Domain::Essay, Label::LlmGenerated, [1220, 175, 349]),
    (Domain::Essay, Label::Humanized, [179, 25, 52]),
    (Domain::News, Label::HumanWritten, [700, 100, 200]),
    (Domain::News, Label::LlmPolished, [700, 100, 200]),
    (Domain::News, Label::LlmGenerated, [1229, 175, 354]),
    (Domain::News, Label::Humanized, [169, 25, 48]),
    (Domain::Writing, Label::HumanWritten, [700, 100, 200]),
    (Domain::Writing, Label::LlmPolished, [700, 99, 201]),
    (Domain::Writing, Label::LlmGenerated, [1211, 175, 342]),
    (Domain::Writing, Label::Humanized, [191, 27, 54]),
];

pub const HART_TOTALS: [usize; 3] = [11_200, 1_600, 3_200];
