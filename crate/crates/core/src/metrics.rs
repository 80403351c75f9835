//! Evaluation metrics over one-vs-rest class scores.
//!
//! Thresholds follow the rule "score ≥ τ ⇒ positive", with candidate
//! thresholds drawn from the observed scores plus `+∞`. The ROC curve is
//! never interpolated: with fewer than `1/cap` negatives the FPR cap means
//! zero false positives.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Mat};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("class {class} has no positive or no negative samples")]
    DegenerateClass { class: usize },
    #[error("degenerate clustering: {0}")]
    DegenerateCluster(String),
    #[error("score table shape mismatch: {0}")]
    Shape(String),
    #[error("score table has no token lengths")]
    MissingLengths,
}

/// Scores and labels for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// `N × C` class probabilities.
    pub probs: Mat,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub lengths: Option<Vec<usize>>,
    #[serde(default)]
    pub domains: Option<Vec<String>>,
}

impl ScoreTable {
    pub fn new(probs: Mat, labels: Vec<usize>) -> Result<Self, MetricsError> {
        if probs.rows() != labels.len() {
            return Err(MetricsError::Shape(alloc::format!("{} rows, {} labels", probs.rows(), labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= probs.cols()) {
            return Err(MetricsError::Shape(alloc::format!("label {l} >= {} classes", probs.cols())));
        }
        Ok(ScoreTable { probs, labels, lengths: None, domains: None })
    }

    pub fn with_lengths(mut self, lengths: Vec<usize>) -> Result<Self, MetricsError> {
        if lengths.len() != self.labels.len() {
            return Err(MetricsError::Shape("lengths".into()));
        }
        self.lengths = Some(lengths);
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Scores for class `c` and the matching one-vs-rest targets.
    pub fn one_vs_rest(&self, c: usize) -> (Vec<f64>, Vec<bool>) {
        let scores = (0..self.len()).map(|i| self.probs[(i, c)]).collect();
        let targets = self.labels.iter().map(|&l| l == c).collect();
        (scores, targets)
    }

    fn subset(&self, rows: &[usize]) -> ScoreTable {
        let mut probs = Mat::zeros(rows.len(), self.num_classes());
        for (o, &i) in rows.iter().enumerate() {
            probs.row_mut(o).copy_from_slice(self.probs.row(i));
        }
        ScoreTable {
            probs,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            lengths: self.lengths.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect()),
            domains: self.domains.as_ref().map(|d| rows.iter().map(|&i| d[i].clone()).collect()),
        }
    }
}

/// Binary AUROC as the Mann-Whitney statistic with midranks for ties.
pub fn binary_auroc(scores: &[f64], targets: &[bool]) -> Option<f64> {
    let n_pos = targets.iter().filter(|&&t| t).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if targets[k] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

pub fn class_auroc(table: &ScoreTable, c: usize) -> Result<f64, MetricsError> {
    let (s, t) = table.one_vs_rest(c);
    binary_auroc(&s, &t).ok_or(MetricsError::DegenerateClass { class: c })
}

/// Unweighted mean of the per-class one-vs-rest AUROCs.
pub fn macro_auroc(table: &ScoreTable) -> Result<f64, MetricsError> {
    let c = table.num_classes();
    let mut sum = 0.0;
    for k in 0..c {
        sum += class_auroc(table, k)?;
    }
    Ok(sum / c as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// `+∞` when only rejecting everything meets the cap; serialized as null.
    #[serde(with = "infinite_as_null")]
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_finite() {
            s.serialize_some(t)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Smallest candidate threshold whose FPR does not exceed `fpr_cap`, and the
/// TPR there.
pub fn binary_tpr_at_fpr(scores: &[f64], targets: &[bool], fpr_cap: f64) -> Option<OperatingPoint> {
    let mut pos: Vec<f64> = scores.iter().zip(targets).filter(|(_, &t)| t).map(|(&s, _)| s).collect();
    let mut neg: Vec<f64> = scores.iter().zip(targets).filter(|(_, &t)| !t).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);
    let at_least = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&x| x < t);
    let n_neg = neg.len() as f64;
    // FPR is non-increasing in the threshold: first feasible candidate wins
    let idx = candidates.partition_point(|&t| at_least(&neg, t) as f64 / n_neg > fpr_cap);
    let threshold = candidates[idx];
    Some(OperatingPoint {
        threshold,
        tpr: at_least(&pos, threshold) as f64 / pos.len() as f64,
        fpr: at_least(&neg, threshold) as f64 / n_neg,
    })
}

pub fn tpr_at_fpr(table: &ScoreTable, c: usize, fpr_cap: f64) -> Result<OperatingPoint, MetricsError> {
    let (s, t) = table.one_vs_rest(c);
    binary_tpr_at_fpr(&s, &t, fpr_cap).ok_or(MetricsError::DegenerateClass { class: c })
}

/// Per-class operating points and their unweighted mean TPR.
pub fn macro_tpr_at_fpr(table: &ScoreTable, fpr_cap: f64) -> Result<(Vec<OperatingPoint>, f64), MetricsError> {
    let points = (0..table.num_classes())
        .map(|c| tpr_at_fpr(table, c, fpr_cap))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = points.iter().map(|p| p.tpr).sum::<f64>() / points.len() as f64;
    Ok((points, mean))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterIndices {
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
}

/// Davies-Bouldin (lower is better) and Calinski-Harabasz (higher is better)
/// indices of the label partition of `embeddings`.
pub fn clustering_indices(embeddings: &Mat, labels: &[usize]) -> Result<ClusterIndices, MetricsError> {
    let n = embeddings.rows();
    let d = embeddings.cols();
    if labels.len() != n {
        return Err(MetricsError::Shape("labels".into()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    if k < 2 {
        return Err(MetricsError::DegenerateCluster("fewer than 2 classes".into()));
    }
    let mut centroids = Mat::zeros(k, d);
    let mut counts = vec![0usize; k];
    let cluster_of: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    for (i, &c) in cluster_of.iter().enumerate() {
        counts[c] += 1;
        crate::linalg::axpy(1.0, embeddings.row(i), centroids.row_mut(c));
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(MetricsError::DegenerateCluster("a class has fewer than 2 points".into()));
    }
    for c in 0..k {
        let inv = 1.0 / counts[c] as f64;
        centroids.row_mut(c).iter_mut().for_each(|x| *x *= inv);
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        libm::sqrt(dot(&diff, &diff))
    };
    let mut scatter = vec![0.0; k];
    let mut within = 0.0;
    for (i, &c) in cluster_of.iter().enumerate() {
        let r = dist(embeddings.row(i), centroids.row(c));
        scatter[c] += r;
        within += r * r;
    }
    for c in 0..k {
        scatter[c] /= counts[c] as f64;
    }
    if within == 0.0 {
        return Err(MetricsError::DegenerateCluster("zero within-class scatter".into()));
    }
    let mut db = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let m = dist(centroids.row(i), centroids.row(j));
            if m == 0.0 {
                return Err(MetricsError::DegenerateCluster("coincident class centroids".into()));
            }
            worst = worst.max((scatter[i] + scatter[j]) / m);
        }
        db += worst;
    }
    db /= k as f64;

    let mut mean = vec![0.0; d];
    for i in 0..n {
        crate::linalg::axpy(1.0 / n as f64, embeddings.row(i), &mut mean);
    }
    let between: f64 = (0..k)
        .map(|c| {
            let r = dist(centroids.row(c), &mean);
            counts[c] as f64 * r * r
        })
        .sum();
    let ch = (between / (k - 1) as f64) / (within / (n - k) as f64);
    Ok(ClusterIndices { davies_bouldin: db, calinski_harabasz: ch })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    /// Inclusive lower token-length bound.
    pub lo: usize,
    /// Exclusive upper bound; `None` for the open last bucket.
    pub hi: Option<usize>,
    pub count: usize,
    /// Macro TPR at the cap, absent when some class is degenerate in-bucket.
    pub macro_tpr: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

/// Macro TPR at `fpr_cap` within token-length buckets.
///
/// `edges = [e0, e1, ..., em]` gives buckets `[e0, e1), ..., [e(m-1), em)` and
/// a final open bucket `[em, ∞)`. Rows shorter than `e0` are ignored.
pub fn length_bucketed_tpr(table: &ScoreTable, edges: &[usize], fpr_cap: f64) -> Result<Vec<BucketResult>, MetricsError> {
    let lengths = table.lengths.as_ref().ok_or(MetricsError::MissingLengths)?;
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::Shape("bucket edges must be non-empty and increasing".into()));
    }
    let mut out = Vec::with_capacity(edges.len());
    for b in 0..edges.len() {
        let lo = edges[b];
        let hi = edges.get(b + 1).copied();
        let rows: Vec<usize> = (0..table.len()).filter(|&i| lengths[i] >= lo && hi.is_none_or(|h| lengths[i] < h)).collect();
        let sub = table.subset(&rows);
        let per_class: Vec<Option<f64>> =
            (0..table.num_classes()).map(|c| tpr_at_fpr(&sub, c, fpr_cap).ok().map(|p| p.tpr)).collect();
        let macro_tpr = if per_class.iter().all(Option::is_some) && !rows.is_empty() {
            Some(per_class.iter().map(|p| p.unwrap()).sum::<f64>() / per_class.len() as f64)
        } else {
            None
        };
        out.push(BucketResult { lo, hi, count: rows.len(), macro_tpr, per_class });
    }
    Ok(out)
}
