//! One function per subcommand. Each reads its declared inputs, writes only
//! under its declared output, and returns a summary for the caller to print.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use race_core::analysis::{pairwise_cosine, zscore_profile, PairSimilarity, RelationDoc, RelationProfile, SIMILARITY_PAIRS};
use race_core::dataset::{
    build_corpus, group_aware_split, leave_one_domain_out, stratified_split, Exclusion, Label, Partition, RawRecord,
    Record, SplitAssignment,
};
use race_core::embed::{align_spans, Encoder, MockEncoder};
use race_core::graph::build_graph;
use race_core::metrics::macro_tpr_at_fpr;
use race_core::relation::{RelationLabel, NUM_RELATIONS};
use race_core::synth::{synthetic_corpus, SynthConfig};
use race_core::train::{
    aggregate_seeds, evaluate, predict, train, EncoderMode, EpochRecord, EvalReport, Example, MeanStd, SplitMode,
};
use race_core::RstTree;
use serde::{Deserialize, Serialize};

use crate::cache::EmbeddingCache;
use crate::checkpoint::Checkpoint;
use crate::config::{EncoderIdentity, RunConfig};
use crate::dataset_dir::{DatasetDir, SplitMeta, StatsFile};
use crate::hooks::{Parser, SubprocessEncoder};
use crate::trees::TreeCache;
use crate::{hart, jsonl, RaceError, Result};

// ---------------------------------------------------------------- parse-cache

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseSummary {
    pub total: usize,
    pub parsed: usize,
    pub skipped: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub doc_id: String,
    pub error: String,
}

/// Failures of the latest run, next to the tree cache.
pub fn failures_path(cache: &TreeCache) -> PathBuf {
    cache.path().with_file_name("parse_failures.jsonl")
}

/// Parse every document of `input` not yet in `cache`. A failing document is
/// logged and counted; the run continues.
pub fn parse_cache(input: &Path, cache: &TreeCache, parser: &Parser) -> Result<ParseSummary> {
    let docs = hart::load_raw(input)?;
    let mut done = cache.ids()?;
    cache.touch()?;
    let mut summary = ParseSummary { total: docs.len(), ..ParseSummary::default() };
    let mut failures = Vec::new();
    for doc in &docs {
        if done.contains(&doc.id) {
            summary.skipped += 1;
            continue;
        }
        match parser.parse(&doc.id, &doc.text) {
            Ok(tree) => {
                cache.append(std::slice::from_ref(&tree))?;
                done.insert(doc.id.clone());
                summary.parsed += 1;
            }
            Err(e) => {
                log::warn!("parse failed for {}: {e}", doc.id);
                failures.push(ParseFailure { doc_id: doc.id.clone(), error: e.to_string() });
                summary.failed += 1;
            }
        }
    }
    jsonl::write(&failures_path(cache), &failures)?;
    Ok(summary)
}

// -------------------------------------------------------------- build-dataset

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    /// Unlabelled benchmark records, labelled by the mapping rules.
    Raw(PathBuf),
    /// Already labelled records (`corpus.jsonl` layout).
    Corpus(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub records: usize,
    pub excluded: usize,
    pub stats: StatsFile,
}

pub fn split_records(records: &[Record], mode: SplitMode, cfg: &RunConfig) -> Result<SplitAssignment> {
    let ratios = cfg.data.split_ratios()?;
    let seed = cfg.data.seed;
    Ok(match mode {
        SplitMode::Stratified => stratified_split(records, ratios, seed)?,
        SplitMode::Group => group_aware_split(records, ratios, seed)?,
        SplitMode::Lodo(d) => leave_one_domain_out(records, d, seed)?,
    })
}

pub fn build_dataset(source: &DatasetSource, out: &DatasetDir, cfg: &RunConfig) -> Result<BuildSummary> {
    let (records, exclusions) = match source {
        DatasetSource::Raw(p) => build_corpus(&hart::load_raw(p)?),
        DatasetSource::Corpus(p) => dedupe(jsonl::read(p)?),
    };
    let mode = cfg.train.split;
    let split = split_records(&records, mode, cfg)?;
    let meta = SplitMeta { mode, seed: cfg.data.seed, ratios: cfg.data.ratios, warnings: split.warnings.clone() };
    let stats = out.write(&records, &split, &meta, &exclusions)?;
    Ok(BuildSummary { records: records.len(), excluded: exclusions.len(), stats })
}

fn dedupe(records: Vec<Record>) -> (Vec<Record>, Vec<Exclusion>) {
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for r in records {
        if seen.insert(r.id.clone()) {
            kept.push(r);
        } else {
            excluded.push(Exclusion { id: r.id, reason: "duplicate id".into() });
        }
    }
    (kept, excluded)
}

// ------------------------------------------------------------------ examples

/// Encoder, its identity and the embedding cache, as selected by the config.
pub struct Embedder {
    encoder: Box<dyn Encoder>,
    pub identity: EncoderIdentity,
    cache: EmbeddingCache,
    overlap: usize,
}

impl Embedder {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let identity = cfg.encoder_identity();
        let encoder: Box<dyn Encoder> = match cfg.train.encoder {
            EncoderMode::Mock => Box::new(MockEncoder::new(cfg.model.d_plm, cfg.encoder.mock_seed).with_window(cfg.encoder.window)),
            EncoderMode::Real => {
                if cfg.encoder.command.is_empty() {
                    return Err(RaceError::Config(
                        "the real encoder needs encoder.command (or use --encoder mock)".into(),
                    ));
                }
                Box::new(SubprocessEncoder {
                    command: cfg.encoder.command.clone(),
                    name: identity.name.clone(),
                    revision: identity.revision.clone(),
                    dim: identity.dim,
                    window: cfg.encoder.window,
                })
            }
        };
        Ok(Embedder { encoder, identity, cache: EmbeddingCache::new(cfg.embedding_dir()), overlap: cfg.encoder.overlap })
    }

    pub fn example(&self, tree: &RstTree, label: Label) -> Result<Example> {
        let id = tree.doc_id();
        let emb = self.cache.get_or_embed(id, tree.document(), self.encoder.as_ref(), &self.identity, self.overlap)?;
        let align = align_spans(tree, &emb).map_err(|e| RaceError::doc(id, e))?;
        let graph = build_graph(tree).map_err(|e| RaceError::doc(id, e))?;
        Example::new(id, label, graph, &emb, &align).map_err(|e| RaceError::doc(id, e))
    }
}

fn partition_examples(
    data: &DatasetDir,
    part: Partition,
    trees: &BTreeMap<String, RstTree>,
    embedder: &Embedder,
) -> Result<Vec<Example>> {
    let manifest = data.manifest(part)?;
    let mut out = Vec::with_capacity(manifest.len());
    for entry in &manifest {
        let tree = trees
            .get(&entry.id)
            .ok_or_else(|| RaceError::doc(&entry.id, "not in the tree cache; run parse-cache first"))?;
        out.push(embedder.example(tree, entry.label)?);
    }
    Ok(out)
}

// --------------------------------------------------------------------- train

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub selected: EpochRecord,
    pub test: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seeds: Vec<SeedResult>,
    pub aggregate: Option<BTreeMap<String, MeanStd>>,
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed{seed}"))
}

/// Train one model per configured seed and evaluate each on the test split.
///
/// Run directory: `config.toml`, `seed<S>/{checkpoint.json, history.jsonl,
/// report.json}`, `reports.jsonl`, `aggregate.json` (two or more seeds with
/// a test split) and `summary.txt`.
pub fn train_run(cfg: &RunConfig, data: &DatasetDir, trees: &TreeCache, run_dir: &Path) -> Result<TrainSummary> {
    let trees = trees.load()?;
    let embedder = Embedder::from_config(cfg)?;
    let train_set = partition_examples(data, Partition::Train, &trees, &embedder)?;
    let val_set = partition_examples(data, Partition::Val, &trees, &embedder)?;
    let test_set = partition_examples(data, Partition::Test, &trees, &embedder)?;
    if train_set.is_empty() {
        return Err(RaceError::Missing("the train manifest is empty".into()));
    }
    jsonl::write_text(&run_dir.join("config.toml"), &cfg.to_toml()?)?;

    let mut seeds = Vec::new();
    let mut flat = Vec::new();
    let mut lines = Vec::new();
    for &seed in &cfg.train.seeds {
        log::info!("seed {seed}: {} train, {} val, {} test", train_set.len(), val_set.len(), test_set.len());
        let out = train(&train_set, &val_set, &cfg.model, &cfg.train, seed)?;
        let dir = seed_dir(run_dir, seed);
        let ck = Checkpoint::new(
            cfg.model.clone(),
            embedder.identity.clone(),
            seed,
            out.best_epoch,
            out.history.clone(),
            out.params.clone(),
        );
        ck.save(&dir.join("checkpoint.json"))?;
        jsonl::write(&dir.join("history.jsonl"), &out.history)?;
        let test = if test_set.is_empty() { None } else { Some(evaluate(&test_set, &out.params, &cfg.model)?) };
        if let Some(r) = &test {
            jsonl::write_json(&dir.join("report.json"), r)?;
            let mut m = r.flatten();
            flat.push(m.clone());
            m.insert("seed".into(), seed as f64);
            lines.push(m);
        }
        seeds.push(SeedResult { seed, best_epoch: out.best_epoch, selected: out.best().clone(), test });
    }
    jsonl::write(&run_dir.join("reports.jsonl"), &lines)?;
    let aggregate = if flat.len() >= 2 { Some(aggregate_seeds(&flat)?) } else { None };
    if let Some(a) = &aggregate {
        jsonl::write_json(&run_dir.join("aggregate.json"), a)?;
    }
    let summary = TrainSummary { seeds, aggregate };
    jsonl::write_text(&run_dir.join("summary.txt"), &train_summary_text(&summary))?;
    Ok(summary)
}

pub fn train_summary_text(s: &TrainSummary) -> String {
    let mut out = String::new();
    for r in &s.seeds {
        out += &format!(
            "seed {}: best epoch {}, val macro-AUROC {}, val avg TPR {}\n",
            r.seed,
            r.best_epoch,
            pct(r.selected.val_macro_auroc),
            pct(r.selected.val_avg_tpr)
        );
        if let Some(t) = &r.test {
            out += &format!(
                "  test macro-AUROC {}, avg TPR@1%FPR {}, avg TPR@5%FPR {}\n",
                pct(t.macro_auroc),
                pct(t.avg_tpr_at_1),
                pct(t.avg_tpr_at_5)
            );
        }
    }
    if let Some(a) = &s.aggregate {
        out += "across seeds (mean ± sample std):\n";
        for key in ["macro_auroc", "avg_tpr@1", "avg_tpr@5"] {
            if let Some(m) = a.get(key) {
                out += &format!("  {key:<12} {:.2} ± {:.2}\n", 100.0 * m.mean, 100.0 * m.std);
            }
        }
    }
    out
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.2}", 100.0 * x))
}

// ------------------------------------------------------------------ evaluate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub metric: String,
    pub value: f64,
}

pub fn evaluate_run(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &DatasetDir,
    part: Partition,
    trees: &TreeCache,
    out_dir: &Path,
) -> Result<EvalReport> {
    let embedder = Embedder::from_config(cfg)?;
    let ck = Checkpoint::load_matching(checkpoint, &cfg.model, &embedder.identity)?;
    let examples = partition_examples(data, part, &trees.load()?, &embedder)?;
    let report = evaluate(&examples, &ck.params, &ck.model)?;
    let (table, _) = predict(&examples, &ck.params, &ck.model)?;
    let at_cap = macro_tpr_at_fpr(&table, cfg.fpr_cap).ok().map(|(_, avg)| avg);

    jsonl::write_json(&out_dir.join("report.json"), &report)?;
    let mut lines: Vec<MetricLine> =
        report.flatten().into_iter().map(|(metric, value)| MetricLine { metric, value }).collect();
    if let Some(v) = at_cap {
        lines.push(MetricLine { metric: format!("avg_tpr@fpr{}", cfg.fpr_cap), value: v });
    }
    jsonl::write(&out_dir.join("metrics.jsonl"), &lines)?;
    jsonl::write_text(&out_dir.join("summary.txt"), &eval_summary_text(&report, part, cfg.fpr_cap, at_cap))?;
    Ok(report)
}

pub fn eval_summary_text(r: &EvalReport, part: Partition, cap: f64, at_cap: Option<f64>) -> String {
    let mut out = format!("{} split, {} documents\n", part.name(), r.n);
    out += &format!("macro-AUROC      {}\n", pct(r.macro_auroc));
    out += &format!("avg TPR@1%FPR    {}\n", pct(r.avg_tpr_at_1));
    out += &format!("avg TPR@5%FPR    {}\n", pct(r.avg_tpr_at_5));
    // the configured cap only gets its own line when it is not one of the two above
    if cap != 0.01 && cap != 0.05 {
        out += &format!("avg TPR@{}%FPR {}\n", 100.0 * cap, pct(at_cap));
    }
    for (k, label) in Label::ALL.iter().enumerate().take(r.class_auroc.len()) {
        out += &format!(
            "  {:<14} n={:<6} AUROC {:>6} TPR@1% {:>6}\n",
            label.name(),
            r.class_counts[k],
            pct(r.class_auroc[k]),
            pct(r.tpr_at_1[k].map(|p| p.tpr))
        );
    }
    if let Some(c) = r.clustering {
        out += &format!("Davies-Bouldin {:.4}, Calinski-Harabasz {:.2}\n", c.davies_bouldin, c.calinski_harabasz);
    }
    for e in &r.errors {
        out += &format!("not computed: {e}\n");
    }
    out
}

// ------------------------------------------------------------------- predict

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub probs: [f64; 4],
    pub label: Label,
}

/// Where predict gets its trees.
pub enum PredictInput<'a> {
    /// Cached trees, optionally restricted to some ids.
    Cache { trees: &'a TreeCache, ids: Option<Vec<String>> },
    /// Raw documents parsed on the fly with the configured parser.
    Documents(&'a Path),
}

pub fn predict_docs(cfg: &RunConfig, checkpoint: &Path, input: PredictInput<'_>, out: &Path) -> Result<Vec<Prediction>> {
    let embedder = Embedder::from_config(cfg)?;
    let ck = Checkpoint::load_matching(checkpoint, &cfg.model, &embedder.identity)?;
    let trees: Vec<RstTree> = match input {
        PredictInput::Cache { trees, ids } => {
            let all = trees.load()?;
            match ids {
                None => all.into_values().collect(),
                Some(ids) => ids
                    .iter()
                    .map(|id| all.get(id).cloned().ok_or_else(|| RaceError::doc(id, "not in the tree cache")))
                    .collect::<Result<_>>()?,
            }
        }
        PredictInput::Documents(p) => {
            let parser = Parser::from_command(&cfg.parser.command);
            let raws: Vec<RawRecord> = hart::load_raw(p)?;
            raws.iter().map(|r| parser.parse(&r.id, &r.text)).collect::<Result<_>>()?
        }
    };
    // the label slot is unused by prediction
    let examples: Vec<Example> =
        trees.iter().map(|t| embedder.example(t, Label::HumanWritten)).collect::<Result<_>>()?;
    let preds = if examples.is_empty() {
        Vec::new()
    } else {
        let (table, _) = predict(&examples, &ck.params, &ck.model)?;
        examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let row = table.probs.row(i);
                let probs = [row[0], row[1], row[2], row[3]];
                let best = (0..4).fold(0, |b, k| if probs[k] > probs[b] { k } else { b });
                Prediction { doc_id: ex.id.clone(), probs, label: Label::ALL[best] }
            })
            .collect()
    };
    jsonl::write(out, &preds)?;
    Ok(preds)
}

// ------------------------------------------------------------------- analyze

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZLine {
    pub label: Label,
    pub relation: RelationLabel,
    pub class_mean: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityLine {
    pub reference: Label,
    pub target: Label,
    pub result: Option<PairSimilarity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub documents: usize,
    pub missing_trees: usize,
    pub profile: RelationProfile,
    pub similarities: Vec<SimilarityLine>,
}

/// Relation documents for every corpus record with a cached tree.
pub fn relation_docs(records: &[Record], trees: &BTreeMap<String, RstTree>) -> (Vec<RelationDoc>, usize) {
    let mut missing = 0;
    let mut docs = Vec::with_capacity(records.len());
    for r in records {
        match trees.get(&r.id) {
            Some(t) => docs.push(RelationDoc {
                id: r.id.clone(),
                group_id: r.group_id.clone(),
                label: r.label,
                counts: t.relation_frequency_vector(),
            }),
            None => missing += 1,
        }
    }
    (docs, missing)
}

pub fn analyze(data: &DatasetDir, trees: &TreeCache, out_dir: &Path) -> Result<AnalysisOutput> {
    let records = data.records()?;
    let (docs, missing_trees) = relation_docs(&records, &trees.load()?);
    if missing_trees > 0 {
        log::warn!("{missing_trees} corpus records have no cached tree and are left out");
    }
    let profile = zscore_profile(&docs).map_err(|e| RaceError::Missing(e.to_string()))?;
    let similarities = SIMILARITY_PAIRS
        .iter()
        .map(|&(reference, target)| match pairwise_cosine(reference, target, &docs) {
            Ok(s) => SimilarityLine { reference, target, result: Some(s), error: None },
            Err(e) => SimilarityLine { reference, target, result: None, error: Some(e.to_string()) },
        })
        .collect();
    let out = AnalysisOutput { documents: docs.len(), missing_trees, profile, similarities };

    let mut zlines = Vec::with_capacity(4 * NUM_RELATIONS);
    for (k, label) in Label::ALL.iter().enumerate() {
        for (j, relation) in RelationLabel::ALL.iter().enumerate() {
            zlines.push(ZLine {
                label: *label,
                relation: *relation,
                class_mean: out.profile.class_means[k][j],
                z: out.profile.z[k][j],
            });
        }
    }
    jsonl::write_json(&out_dir.join("analysis.json"), &out)?;
    jsonl::write(&out_dir.join("zscores.jsonl"), &zlines)?;
    jsonl::write(&out_dir.join("similarity.jsonl"), &out.similarities)?;
    jsonl::write_text(&out_dir.join("summary.txt"), &analysis_summary_text(&out))?;
    Ok(out)
}

pub fn analysis_summary_text(a: &AnalysisOutput) -> String {
    let mut out = format!("{} documents ({} without a tree)\n", a.documents, a.missing_trees);
    out += "cross-class cosine similarity of relation counts (same base text):\n";
    for s in &a.similarities {
        match &s.result {
            Some(r) => {
                out += &format!("  {:<14} vs {:<14} {:.2} ± {:.2} ({} pairs)\n", s.reference.name(), s.target.name(), r.mean, r.std, r.pairs)
            }
            None => out += &format!("  {:<14} vs {:<14} n/a\n", s.reference.name(), s.target.name()),
        }
    }
    out += "most over-expressed relation per class (Z):\n";
    for (k, label) in Label::ALL.iter().enumerate() {
        let z = &a.profile.z[k];
        let j = (0..NUM_RELATIONS).fold(0, |b, j| if z[j] > z[b] { j } else { b });
        out += &format!("  {:<14} {} ({:+.2})\n", label.name(), RelationLabel::ALL[j].name(), z[j]);
    }
    out
}

// --------------------------------------------------------------------- synth

/// Write a synthetic labelled corpus and its trees: `corpus.jsonl` and
/// `trees.jsonl` under `out_dir`.
pub fn synth(cfg: &SynthConfig, out_dir: &Path) -> Result<usize> {
    let docs = synthetic_corpus(cfg);
    jsonl::write(&out_dir.join("corpus.jsonl"), docs.iter().map(|d| &d.record))?;
    jsonl::write(&out_dir.join("trees.jsonl"), docs.iter().map(|d| d.tree.to_record()))?;
    Ok(docs.len())
}
