//! Joint training objective: supervised contrastive loss on L2-normalised
//! graph embeddings plus cross-entropy on the class probabilities.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{axpy, dot, norm, Mat};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
/// Norm floor for embedding normalisation.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("contrastive loss needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("batch shape mismatch: {0}")]
    Shape(alloc::string::String),
    #[error("temperature must be positive")]
    BadTemperature,
}

/// A mini-batch of model outputs.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `N × hidden` root states, not normalised.
    pub embeddings: Mat,
    /// `N × C` class probabilities.
    pub probs: Mat,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(embeddings: Mat, probs: Mat, labels: Vec<usize>) -> Result<Self, LossError> {
        if embeddings.rows() != labels.len() || probs.rows() != labels.len() {
            return Err(LossError::Shape(alloc::format!(
                "{} embeddings, {} prob rows, {} labels",
                embeddings.rows(),
                probs.rows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= probs.cols()) {
            return Err(LossError::BadLabel { label, classes: probs.cols() });
        }
        Ok(Batch { embeddings, probs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn l2_normalize(x: &[f64]) -> Vec<f64> {
    let n = norm(x).max(NORM_FLOOR);
    x.iter().map(|v| v / n).collect()
}

/// Supervised contrastive loss and its gradient with respect to the raw
/// (un-normalised) embeddings.
///
/// For anchor `i` with positives `P(i)` (same label, excluding `i`) and
/// candidates `A(i)` (everything but `i`):
/// `ℓ_i = -1/|P(i)| Σ_{p∈P(i)} log(exp(u_i·u_p/τ) / Σ_{a∈A(i)} exp(u_i·u_a/τ))`.
/// Anchors with no positive are skipped; the loss is the mean of `ℓ_i` over
/// the remaining anchors, or 0 if none remain.
pub fn supcon_loss_grad(embeddings: &Mat, labels: &[usize], temperature: f64) -> Result<(f64, Mat), LossError> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(LossError::BatchTooSmall(n));
    }
    if labels.len() != n {
        return Err(LossError::Shape(alloc::format!("{n} embeddings, {} labels", labels.len())));
    }
    if !(temperature > 0.0) {
        return Err(LossError::BadTemperature);
    }
    let units: Vec<Vec<f64>> = (0..n).map(|i| l2_normalize(embeddings.row(i))).collect();
    let positives: Vec<usize> =
        (0..n).map(|i| (0..n).filter(|&j| j != i && labels[j] == labels[i]).count()).collect();
    let anchors = positives.iter().filter(|&&p| p > 0).count();
    let d = embeddings.cols();
    let mut d_units = vec![vec![0.0; d]; n];
    if anchors == 0 {
        return Ok((0.0, Mat::zeros(n, d)));
    }
    let mut loss = 0.0;
    for i in 0..n {
        let np = positives[i];
        if np == 0 {
            continue;
        }
        let sims: Vec<f64> = (0..n).map(|a| if a == i { 0.0 } else { dot(&units[i], &units[a]) / temperature }).collect();
        let max = (0..n).filter(|&a| a != i).map(|a| sims[a]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| libm::exp(sims[a] - max)).sum();
        let lse = max + libm::log(denom);
        let pos_sum: f64 = (0..n).filter(|&p| p != i && labels[p] == labels[i]).map(|p| sims[p]).sum();
        let w = 1.0 / (anchors as f64 * np as f64);
        loss += w * (np as f64 * lse - pos_sum);
        // dL/ds_ia = w (|P(i)| q_ia - [a ∈ P(i)])
        for a in 0..n {
            if a == i {
                continue;
            }
            let q = libm::exp(sims[a] - lse);
            let g = w * (np as f64 * q - if labels[a] == labels[i] { 1.0 } else { 0.0 }) / temperature;
            let (ui, ua) = (units[i].clone(), units[a].clone());
            axpy(g, &ua, &mut d_units[i]);
            axpy(g, &ui, &mut d_units[a]);
        }
    }
    // back through u = z / max(|z|, floor)
    let mut grad = Mat::zeros(n, d);
    for i in 0..n {
        let z = embeddings.row(i);
        let zn = norm(z);
        let out = grad.row_mut(i);
        if zn > NORM_FLOOR {
            let proj = dot(&units[i], &d_units[i]);
            for j in 0..d {
                out[j] = (d_units[i][j] - units[i][j] * proj) / zn;
            }
        } else {
            for j in 0..d {
                out[j] = d_units[i][j] / NORM_FLOOR;
            }
        }
    }
    Ok((loss, grad))
}

pub fn supcon_loss(batch: &Batch, temperature: f64) -> Result<f64, LossError> {
    supcon_loss_grad(&batch.embeddings, &batch.labels, temperature).map(|(l, _)| l)
}

/// Mean negative log-probability of the true class.
pub fn ce_loss(batch: &Batch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -libm::log(batch.probs[(i, y)].max(PROB_FLOOR)))
        .sum();
    total / batch.len() as f64
}

/// Gradient of [`ce_loss`] with respect to the pre-softmax logits:
/// `(p - onehot(y)) / N` per row.
pub fn ce_logit_grad(probs: &Mat, labels: &[usize]) -> Mat {
    let n = labels.len() as f64;
    let mut g = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        g[(i, y)] -= 1.0;
        g.row_mut(i).iter_mut().for_each(|x| *x /= n);
    }
    g
}

/// `contrastive_weight · L_con + L_ce`; the weight is 1 unless ablating.
pub fn total_loss(batch: &Batch, temperature: f64, contrastive_weight: f64) -> Result<f64, LossError> {
    Ok(contrastive_weight * supcon_loss(batch, temperature)? + ce_loss(batch))
}
