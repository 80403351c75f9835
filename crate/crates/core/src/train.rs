//! Mini-batch training with validation-based checkpoint selection, evaluation
//! reports and multi-seed aggregation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Domain, Label};
use crate::embed::{SpanAlignment, TokenEmbeddingMatrix};
use crate::graph::LogicGraph;
use crate::linalg::Mat;
use crate::metrics::{self, BucketResult, ClusterIndices, OperatingPoint, ScoreTable};
use crate::model::{backward, forward_contents, node_contents, Dropout, ModelConfig, ModelError, ModelParams};
use crate::objectives::{ce_logit_grad, ce_loss, supcon_loss_grad, Batch, LossError};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::SeededRng;

/// Token-length bucket edges used in evaluation reports.
pub const DEFAULT_BUCKET_EDGES: [usize; 7] = [0, 100, 200, 300, 400, 500, 600];

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("missing data: {0}")]
    DataMissing(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("checkpoint does not match data: {0}")]
    ConfigMismatch(String),
    #[error("reports have different schemas: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    Stratified,
    Group,
    Lodo(Domain),
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitMode::Stratified => f.write_str("stratified"),
            SplitMode::Group => f.write_str("group"),
            SplitMode::Lodo(d) => write!(f, "lodo:{}", d.name().to_ascii_lowercase()),
        }
    }
}

impl FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stratified" => Ok(SplitMode::Stratified),
            "group" | "group-aware" => Ok(SplitMode::Group),
            other => match other.strip_prefix("lodo:") {
                Some(d) => Domain::from_str(d).map(SplitMode::Lodo).map_err(|e| e.to_string()),
                None => Err(alloc::format!("unknown split mode {s:?}")),
            },
        }
    }
}

impl Serialize for SplitMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SplitMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    Real,
    Mock,
}

impl FromStr for EncoderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(EncoderMode::Real),
            "mock" => Ok(EncoderMode::Mock),
            _ => Err(alloc::format!("unknown encoder mode {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate for trainable encoder layers; unused while the encoder
    /// is frozen.
    pub encoder_learning_rate: f64,
    pub weight_decay: f64,
    pub seeds: Vec<u64>,
    pub split: SplitMode,
    pub encoder: EncoderMode,
    /// FPR cap of the selection metric (validation average TPR).
    pub selection_fpr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            encoder_learning_rate: 1e-5,
            weight_decay: 0.01,
            seeds: alloc::vec![0, 1, 2],
            split: SplitMode::Stratified,
            encoder: EncoderMode::Real,
            selection_fpr: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::InvalidConfig("at least one seed is required".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig("learning rate must be positive, weight decay non-negative".into()));
        }
        if !(self.selection_fpr > 0.0 && self.selection_fpr < 1.0) {
            return Err(TrainError::InvalidConfig("selection_fpr must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

/// A document ready for the model: its graph and precomputed node contents.
/// With a frozen encoder the contents never change, so they are computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: usize,
    pub graph: LogicGraph,
    pub contents: Mat,
    /// Token count, for length buckets.
    pub length: usize,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        graph: LogicGraph,
        emb: &TokenEmbeddingMatrix,
        alignment: &SpanAlignment,
    ) -> Result<Self, ModelError> {
        let contents = node_contents(&graph, emb, alignment)?;
        Ok(Example { id: id.into(), label: label.index(), graph, contents, length: emb.num_tokens() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_auroc: Option<f64>,
    pub val_avg_tpr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the selected epoch.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

fn check_examples(examples: &[Example], cfg: &ModelConfig) -> Result<(), TrainError> {
    for ex in examples {
        if ex.contents.cols() != cfg.d_plm {
            return Err(TrainError::ConfigMismatch(alloc::format!(
                "{}: content width {} but model expects {}",
                ex.id,
                ex.contents.cols(),
                cfg.d_plm
            )));
        }
        if ex.label >= cfg.num_classes {
            return Err(TrainError::ConfigMismatch(alloc::format!("{}: label {} out of range", ex.id, ex.label)));
        }
    }
    Ok(())
}

/// Epoch order with labels interleaved so every batch mixes classes.
///
/// Each class is shuffled, then classes are drawn round-robin. A trailing
/// batch of one is merged into the previous batch.
pub fn stratified_batches(labels: &[usize], batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut pools: Vec<Vec<usize>> = alloc::vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        rng.shuffle(pool);
    }
    let mut order = Vec::with_capacity(labels.len());
    let mut cursor = alloc::vec![0usize; classes];
    let mut class_order: Vec<usize> = (0..classes).collect();
    while order.len() < labels.len() {
        rng.shuffle(&mut class_order);
        for &c in &class_order {
            if cursor[c] < pools[c].len() {
                order.push(pools[c][cursor[c]]);
                cursor[c] += 1;
            }
        }
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(tail);
        }
    }
    batches
}

/// Loss and accumulated gradients on one batch.
pub fn batch_loss_grad(
    examples: &[&Example],
    params: &ModelParams,
    cfg: &ModelConfig,
    dropout: &mut Dropout<'_>,
) -> Result<(f64, ModelParams), TrainError> {
    let n = examples.len();
    let mut outputs = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n);
    for ex in examples {
        let (out, cache) = forward_contents(&ex.graph, &ex.contents, params, cfg, dropout)?;
        outputs.push(out);
        caches.push(cache);
    }
    let z = Mat::from_rows(&outputs.iter().map(|o| o.z.clone()).collect::<Vec<_>>());
    let probs = Mat::from_rows(&outputs.iter().map(|o| o.probs.clone()).collect::<Vec<_>>());
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let (con, d_z) = supcon_loss_grad(&z, &labels, cfg.temperature)?;
    let d_logits = ce_logit_grad(&probs, &labels);
    let batch = Batch::new(z, probs, labels)?;
    let loss = cfg.contrastive_weight * con + ce_loss(&batch);
    let mut grads = params.zeros_like();
    for (i, ex) in examples.iter().enumerate() {
        let dz: Vec<f64> = d_z.row(i).iter().map(|g| g * cfg.contrastive_weight).collect();
        backward(&ex.graph, &caches[i], params, cfg, &dz, d_logits.row(i), &mut grads);
    }
    Ok((loss, grads))
}

/// Class probabilities, root embeddings and lengths for a set of examples.
pub fn predict(examples: &[Example], params: &ModelParams, cfg: &ModelConfig) -> Result<(ScoreTable, Mat), TrainError> {
    check_examples(examples, cfg)?;
    let mut probs = Vec::with_capacity(examples.len());
    let mut z = Vec::with_capacity(examples.len());
    for ex in examples {
        let (out, _) = forward_contents(&ex.graph, &ex.contents, params, cfg, &mut Dropout::Off)?;
        probs.push(out.probs);
        z.push(out.z);
    }
    let labels = examples.iter().map(|e| e.label).collect();
    let probs = if probs.is_empty() { Mat::zeros(0, cfg.num_classes) } else { Mat::from_rows(&probs) };
    let z = if z.is_empty() { Mat::zeros(0, cfg.hidden) } else { Mat::from_rows(&z) };
    let table = ScoreTable::new(probs, labels)
        .and_then(|t| t.with_lengths(examples.iter().map(|e| e.length).collect()))
        .map_err(|e| TrainError::ConfigMismatch(e.to_string()))?;
    Ok((table, z))
}

fn selection_scores(table: &ScoreTable, fpr: f64) -> (Option<f64>, Option<f64>) {
    let auroc = metrics::macro_auroc(table).ok();
    let tpr = metrics::macro_tpr_at_fpr(table, fpr).ok().map(|(_, m)| m);
    (auroc, tpr)
}

/// Train one seed. The returned parameters are those of the epoch with the
/// best validation average TPR at `selection_fpr` (ties: higher macro-AUROC,
/// then earlier epoch).
pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    cfg: &ModelConfig,
    tc: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    tc.validate()?;
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(TrainError::DataMissing(alloc::format!("{} training examples", train_set.len())));
    }
    if val_set.is_empty() {
        return Err(TrainError::DataMissing("empty validation split".into()));
    }
    check_examples(train_set, cfg)?;
    check_examples(val_set, cfg)?;

    let mut params = ModelParams::init(cfg, seed)?;
    let mut opt = AdamW::new(tc.optimizer(), &params);
    let mut order_rng = SeededRng::derive(seed, 2);
    let mut drop_rng = SeededRng::derive(seed, 3);
    let labels: Vec<usize> = train_set.iter().map(|e| e.label).collect();

    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, ModelParams, (f64, f64))> = None;
    for epoch in 1..=tc.epochs {
        let batches = stratified_batches(&labels, tc.batch_size, &mut order_rng);
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_loss_grad(&batch, &params, cfg, &mut Dropout::On(&mut drop_rng))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, loss });
            }
            opt.step(&mut params, &grads);
            total += loss * idx.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let (table, _) = predict(val_set, &params, cfg)?;
        let (auroc, tpr) = selection_scores(&table, tc.selection_fpr);
        log::info!("epoch {epoch}: loss {train_loss:.5} val auroc {auroc:?} tpr {tpr:?}");
        history.push(EpochRecord { epoch, train_loss, val_macro_auroc: auroc, val_avg_tpr: tpr });
        let key = (tpr.unwrap_or(f64::NEG_INFINITY), auroc.unwrap_or(f64::NEG_INFINITY));
        if best.as_ref().is_none_or(|(_, _, k)| key > *k) {
            best = Some((epoch, params.clone(), key));
        }
    }
    let (best_epoch, params, _) = best.expect("at least one epoch");
    Ok(TrainOutcome { params, best_epoch, history })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub class_counts: Vec<usize>,
    pub macro_auroc: Option<f64>,
    pub class_auroc: Vec<Option<f64>>,
    pub tpr_at_1: Vec<Option<OperatingPoint>>,
    pub avg_tpr_at_1: Option<f64>,
    pub tpr_at_5: Vec<Option<OperatingPoint>>,
    pub avg_tpr_at_5: Option<f64>,
    pub clustering: Option<ClusterIndices>,
    pub buckets: Vec<BucketResult>,
    /// Metrics that could not be computed, with the reason.
    pub errors: Vec<String>,
}

fn per_class_tpr(table: &ScoreTable, cap: f64, errors: &mut Vec<String>) -> (Vec<Option<OperatingPoint>>, Option<f64>) {
    let mut points = Vec::new();
    for c in 0..table.num_classes() {
        match metrics::tpr_at_fpr(table, c, cap) {
            Ok(p) => points.push(Some(p)),
            Err(e) => {
                errors.push(alloc::format!("tpr@{cap} class {c}: {e}"));
                points.push(None);
            }
        }
    }
    let avg = if points.iter().all(Option::is_some) {
        Some(points.iter().flatten().map(|p| p.tpr).sum::<f64>() / points.len() as f64)
    } else {
        None
    };
    (points, avg)
}

/// Metrics report from predictions. Degenerate metrics are recorded in
/// `errors` instead of aborting.
pub fn report_from_predictions(table: &ScoreTable, embeddings: &Mat, bucket_edges: &[usize]) -> EvalReport {
    let mut errors = Vec::new();
    let c = table.num_classes();
    let mut class_counts = alloc::vec![0; c];
    for &l in &table.labels {
        class_counts[l] += 1;
    }
    let class_auroc: Vec<Option<f64>> = (0..c)
        .map(|k| match metrics::class_auroc(table, k) {
            Ok(a) => Some(a),
            Err(e) => {
                errors.push(alloc::format!("auroc class {k}: {e}"));
                None
            }
        })
        .collect();
    let macro_auroc = if class_auroc.iter().all(Option::is_some) {
        Some(class_auroc.iter().flatten().sum::<f64>() / c as f64)
    } else {
        None
    };
    let (tpr_at_1, avg_tpr_at_1) = per_class_tpr(table, 0.01, &mut errors);
    let (tpr_at_5, avg_tpr_at_5) = per_class_tpr(table, 0.05, &mut errors);
    let clustering = match metrics::clustering_indices(embeddings, &table.labels) {
        Ok(ci) => Some(ci),
        Err(e) => {
            errors.push(alloc::format!("clustering: {e}"));
            None
        }
    };
    let buckets = match metrics::length_bucketed_tpr(table, bucket_edges, 0.01) {
        Ok(b) => b,
        Err(e) => {
            errors.push(alloc::format!("buckets: {e}"));
            Vec::new()
        }
    };
    EvalReport {
        n: table.len(),
        class_counts,
        macro_auroc,
        class_auroc,
        tpr_at_1,
        avg_tpr_at_1,
        tpr_at_5,
        avg_tpr_at_5,
        clustering,
        buckets,
        errors,
    }
}

pub fn evaluate(examples: &[Example], params: &ModelParams, cfg: &ModelConfig) -> Result<EvalReport, TrainError> {
    params.check_shapes(cfg).map_err(|e| TrainError::ConfigMismatch(e.to_string()))?;
    let (table, z) = predict(examples, params, cfg)?;
    Ok(report_from_predictions(&table, &z, &DEFAULT_BUCKET_EDGES))
}

impl EvalReport {
    /// Scalar metrics keyed by name, percentages as fractions.
    pub fn flatten(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let mut put = |k: String, v: Option<f64>| {
            if let Some(v) = v {
                m.insert(k, v);
            }
        };
        put("macro_auroc".into(), self.macro_auroc);
        put("avg_tpr@1".into(), self.avg_tpr_at_1);
        put("avg_tpr@5".into(), self.avg_tpr_at_5);
        for (k, label) in Label::ALL.iter().enumerate().take(self.class_auroc.len()) {
            put(alloc::format!("auroc/{}", label.name()), self.class_auroc[k]);
            put(alloc::format!("tpr@1/{}", label.name()), self.tpr_at_1[k].map(|p| p.tpr));
            put(alloc::format!("tpr@5/{}", label.name()), self.tpr_at_5[k].map(|p| p.tpr));
        }
        if let Some(ci) = self.clustering {
            put("davies_bouldin".into(), Some(ci.davies_bouldin));
            put("calinski_harabasz".into(), Some(ci.calinski_harabasz));
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
}

/// Elementwise mean and sample standard deviation across seed reports.
pub fn aggregate_seeds(reports: &[BTreeMap<String, f64>]) -> Result<BTreeMap<String, MeanStd>, TrainError> {
    if reports.len() < 2 {
        return Err(TrainError::SchemaMismatch(alloc::format!("need at least 2 reports, got {}", reports.len())));
    }
    let keys: Vec<&String> = reports[0].keys().collect();
    for (i, r) in reports.iter().enumerate().skip(1) {
        if r.keys().collect::<Vec<_>>() != keys {
            return Err(TrainError::SchemaMismatch(alloc::format!("report {i} keys differ from report 0")));
        }
    }
    let n = reports.len() as f64;
    let mut out = BTreeMap::new();
    for k in keys {
        let vals: Vec<f64> = reports.iter().map(|r| r[k]).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        out.insert(k.clone(), MeanStd { mean, std: libm::sqrt(var) });
    }
    Ok(out)
}
