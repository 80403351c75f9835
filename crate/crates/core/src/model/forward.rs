use alloc::vec;
use alloc::vec::Vec;

use super::{Activation, LayerParams, ModelConfig, ModelError, ModelParams, LN_EPS};
use crate::embed::{SpanAlignment, TokenEmbeddingMatrix};
use crate::graph::LogicGraph;
use crate::linalg::{axpy, Mat};
use crate::rng::SeededRng;

/// Dropout switch: off in evaluation, driven by a seeded stream in training.
pub enum Dropout<'a> {
    Off,
    On(&'a mut SeededRng),
}

impl Dropout<'_> {
    /// Scaled keep-mask of length `n`, or `None` when inactive.
    fn mask(&mut self, n: usize, rate: f64) -> Option<Vec<f64>> {
        match self {
            Dropout::On(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                Some((0..n).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect())
            }
            _ => None,
        }
    }
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
    }
}

/// Content vector per graph node.
///
/// Leaves average the token rows of their EDU; every other node averages the
/// contents of all leaves in its subtree.
pub fn node_contents(graph: &LogicGraph, emb: &TokenEmbeddingMatrix, alignment: &SpanAlignment) -> Result<Mat, ModelError> {
    let d = emb.dim();
    let n = graph.num_nodes();
    let tokens = emb.embeddings();
    let mut out = Mat::zeros(n, d);
    // leaf sums and counts propagate bottom-up
    let mut sums = Mat::zeros(n, d);
    let mut counts = vec![0usize; n];
    for (v, kind) in graph.nodes().iter().enumerate() {
        if let crate::graph::NodeKind::Leaf { edu } = *kind {
            let &(first, last) = alignment.ranges.get(edu).ok_or_else(|| {
                ModelError::DimensionMismatch(alloc::format!("no alignment for EDU {edu}"))
            })?;
            if last < first || last >= tokens.rows() {
                return Err(ModelError::DimensionMismatch(alloc::format!(
                    "EDU {edu} token range ({first}, {last}) outside {} tokens",
                    tokens.rows()
                )));
            }
            let row = out.row_mut(v);
            for k in first..=last {
                axpy(1.0, tokens.row(k), row);
            }
            let inv = 1.0 / (last - first + 1) as f64;
            row.iter_mut().for_each(|x| *x *= inv);
            sums.row_mut(v).copy_from_slice(out.row(v));
            counts[v] = 1;
        }
    }
    for v in post_order(graph) {
        if graph.nodes()[v].is_leaf() {
            continue;
        }
        let mut acc = vec![0.0; d];
        let mut c = 0;
        for &ch in graph.children(v) {
            axpy(1.0, sums.row(ch), &mut acc);
            c += counts[ch];
        }
        if c == 0 {
            return Err(ModelError::DimensionMismatch(alloc::format!("relation node {v} has no descendant leaves")));
        }
        sums.row_mut(v).copy_from_slice(&acc);
        counts[v] = c;
        let inv = 1.0 / c as f64;
        out.row_mut(v).iter_mut().zip(&acc).for_each(|(o, a)| *o = a * inv);
    }
    Ok(out)
}

/// Nodes reachable from the root through child links, children first.
fn post_order(graph: &LogicGraph) -> Vec<usize> {
    let mut out = Vec::with_capacity(graph.num_nodes());
    let mut stack = vec![(graph.root(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            out.push(v);
        } else {
            stack.push((v, true));
            for &c in graph.children(v).iter().rev() {
                stack.push((c, false));
            }
        }
    }
    out
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub(crate) contents: Mat,
    pub(crate) types: Vec<usize>,
    /// `c' W_proj + b_proj`
    pub(crate) projected: Mat,
    /// normalised rows before gain/bias, and per-row inverse std
    pub(crate) ln_hat: Mat,
    pub(crate) ln_inv_std: Vec<f64>,
    pub(crate) drop0: Vec<Option<Vec<f64>>>,
    /// input to each message-passing layer
    pub(crate) layer_inputs: Vec<Mat>,
    /// per layer, per basis aggregated neighbour sums
    pub(crate) aggregates: Vec<Vec<Mat>>,
    pub(crate) pre_activations: Vec<Mat>,
    pub(crate) z: Vec<f64>,
    pub(crate) drop_head_in: Option<Vec<f64>>,
    pub(crate) head_pre: Vec<f64>,
    pub(crate) head_hidden: Vec<f64>,
    pub(crate) drop_head_out: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// Root hidden state after the last layer.
    pub z: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

struct Projection {
    projected: Mat,
    ln_hat: Mat,
    ln_inv_std: Vec<f64>,
    masks: Vec<Option<Vec<f64>>>,
    h0: Mat,
}

fn project(
    graph: &LogicGraph,
    contents: &Mat,
    params: &ModelParams,
    cfg: &ModelConfig,
    dropout: &mut Dropout<'_>,
) -> Result<Projection, ModelError> {
    if contents.cols() != params.proj_weight.rows() || contents.rows() != graph.num_nodes() {
        return Err(ModelError::DimensionMismatch(alloc::format!(
            "contents {:?} vs {} nodes and projection input {}",
            contents.shape(),
            graph.num_nodes(),
            params.proj_weight.rows()
        )));
    }
    let mut typed = contents.clone();
    for (v, kind) in graph.nodes().iter().enumerate() {
        axpy(1.0, params.type_embedding.row(kind.type_index()), typed.row_mut(v));
    }
    let mut projected = typed.matmul(&params.proj_weight);
    for v in 0..projected.rows() {
        axpy(1.0, params.proj_bias.row(0), projected.row_mut(v));
    }
    let n = projected.rows();
    let d = projected.cols();
    let mut ln_hat = projected.clone();
    let mut ln_inv_std = vec![1.0; n];
    let mut h0 = Mat::zeros(n, d);
    let mut masks = Vec::with_capacity(n);
    for v in 0..n {
        if cfg.layer_norm {
            let row = ln_hat.row_mut(v);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / libm::sqrt(var + LN_EPS);
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
            ln_inv_std[v] = inv;
            let out = h0.row_mut(v);
            for j in 0..d {
                out[j] = params.ln_gain[(0, j)] * ln_hat[(v, j)] + params.ln_bias[(0, j)];
            }
        } else {
            h0.row_mut(v).copy_from_slice(projected.row(v));
        }
        let mask = dropout.mask(d, cfg.dropout);
        apply_mask(h0.row_mut(v), &mask);
        masks.push(mask);
    }
    Ok(Projection { projected, ln_hat, ln_inv_std, masks, h0 })
}

/// `h⁽⁰⁾ = Dropout(LN((c + E_type[τ]) W_proj + b_proj))` from precomputed
/// node contents.
pub fn project_node_features(
    graph: &LogicGraph,
    contents: &Mat,
    params: &ModelParams,
    cfg: &ModelConfig,
    dropout: &mut Dropout<'_>,
) -> Result<Mat, ModelError> {
    Ok(project(graph, contents, params, cfg, dropout)?.h0)
}

/// Node contents followed by the bottleneck projection.
pub fn init_node_features(
    graph: &LogicGraph,
    emb: &TokenEmbeddingMatrix,
    alignment: &SpanAlignment,
    params: &ModelParams,
    cfg: &ModelConfig,
    dropout: &mut Dropout<'_>,
) -> Result<Mat, ModelError> {
    if emb.dim() != cfg.d_plm {
        return Err(ModelError::DimensionMismatch(alloc::format!(
            "embedding width {} but model expects {}",
            emb.dim(),
            cfg.d_plm
        )));
    }
    let contents = node_contents(graph, emb, alignment)?;
    project_node_features(graph, &contents, params, cfg, dropout)
}

/// `1 / |N_r(i)|` for every edge, indexed like `graph.edges()`.
pub(crate) fn edge_norms(graph: &LogicGraph) -> Vec<f64> {
    let r = graph.num_relations();
    let mut indeg = vec![0u32; graph.num_nodes() * r];
    for e in graph.edges() {
        indeg[e.dst * r + e.relation] += 1;
    }
    graph.edges().iter().map(|e| 1.0 / f64::from(indeg[e.dst * r + e.relation])).collect()
}

/// Per-basis neighbour aggregates `A_k[i] = Σ_{(j,r,i)} α_rk / |N_r(i)| · h_j`.
fn aggregate(graph: &LogicGraph, h: &Mat, layer: &LayerParams, norms: &[f64]) -> Vec<Mat> {
    let nb = layer.bases.len();
    let mut agg: Vec<Mat> = (0..nb).map(|_| Mat::zeros(h.rows(), h.cols())).collect();
    for (e, &norm) in graph.edges().iter().zip(norms) {
        let src = h.row(e.src);
        for (k, a) in agg.iter_mut().enumerate() {
            let c = layer.coeffs[(e.relation, k)] * norm;
            if c != 0.0 {
                axpy(c, src, a.row_mut(e.dst));
            }
        }
    }
    agg
}

fn layer_forward(graph: &LogicGraph, h: &Mat, layer: &LayerParams, norms: &[f64]) -> (Vec<Mat>, Mat) {
    let agg = aggregate(graph, h, layer, norms);
    let mut pre = h.matmul(&layer.self_weight);
    for (a, basis) in agg.iter().zip(&layer.bases) {
        pre.add_assign(&a.matmul(basis));
    }
    (agg, pre)
}

fn check_layer(graph: &LogicGraph, h: &Mat, layer: &LayerParams) -> Result<(), ModelError> {
    if h.rows() != graph.num_nodes() || h.cols() != layer.self_weight.rows() {
        return Err(ModelError::DimensionMismatch(alloc::format!(
            "layer input {:?} for {} nodes and width {}",
            h.shape(),
            graph.num_nodes(),
            layer.self_weight.rows()
        )));
    }
    if layer.coeffs.rows() < graph.num_relations() {
        return Err(ModelError::DimensionMismatch("fewer coefficient rows than relations".into()));
    }
    Ok(())
}

/// One message-passing layer:
/// `h_i' = σ(Σ_r Σ_{j ∈ N_r(i)} h_j W_r / |N_r(i)| + h_i W_0)`.
pub fn rgcn_forward(graph: &LogicGraph, h: &Mat, layer: &LayerParams, activation: Activation) -> Result<Mat, ModelError> {
    check_layer(graph, h, layer)?;
    let norms = edge_norms(graph);
    let (_, mut pre) = layer_forward(graph, h, layer, &norms);
    pre.as_mut_slice().iter_mut().for_each(|x| *x = activation.apply(*x));
    Ok(pre)
}

/// Full forward pass from node contents; also returns the backward cache.
pub fn forward_contents(
    graph: &LogicGraph,
    contents: &Mat,
    params: &ModelParams,
    cfg: &ModelConfig,
    dropout: &mut Dropout<'_>,
) -> Result<(ForwardOutput, ForwardCache), ModelError> {
    let proj = project(graph, contents, params, cfg, dropout)?;
    let norms = edge_norms(graph);
    let mut h = proj.h0;
    let mut layer_inputs = Vec::with_capacity(params.layers.len());
    let mut aggregates = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        check_layer(graph, &h, layer)?;
        let (agg, pre) = layer_forward(graph, &h, layer, &norms);
        let mut next = pre.clone();
        next.as_mut_slice().iter_mut().for_each(|x| *x = cfg.activation.apply(*x));
        layer_inputs.push(core::mem::replace(&mut h, next));
        aggregates.push(agg);
        pre_activations.push(pre);
    }
    let z = h.row(graph.root()).to_vec();

    let mut z_in = z.clone();
    let drop_head_in = dropout.mask(z_in.len(), cfg.dropout);
    apply_mask(&mut z_in, &drop_head_in);
    let mut head_pre = crate::linalg::vec_mat(&z_in, &params.head_in_weight);
    axpy(1.0, params.head_in_bias.row(0), &mut head_pre);
    let mut head_hidden: Vec<f64> = head_pre.iter().map(|&x| cfg.activation.apply(x)).collect();
    let drop_head_out = dropout.mask(head_hidden.len(), cfg.dropout);
    let hidden_for_cache = head_hidden.clone();
    apply_mask(&mut head_hidden, &drop_head_out);
    let mut logits = crate::linalg::vec_mat(&head_hidden, &params.head_out_weight);
    axpy(1.0, params.head_out_bias.row(0), &mut logits);
    let probs = softmax(&logits);

    let cache = ForwardCache {
        contents: contents.clone(),
        types: graph.nodes().iter().map(|k| k.type_index()).collect(),
        projected: proj.projected,
        ln_hat: proj.ln_hat,
        ln_inv_std: proj.ln_inv_std,
        drop0: proj.masks,
        layer_inputs,
        aggregates,
        pre_activations,
        z: z.clone(),
        drop_head_in,
        head_pre,
        head_hidden: hidden_for_cache,
        drop_head_out,
    };
    Ok((ForwardOutput { z, logits, probs }, cache))
}

/// Forward pass from raw token embeddings.
pub fn forward(
    graph: &LogicGraph,
    emb: &TokenEmbeddingMatrix,
    alignment: &SpanAlignment,
    params: &ModelParams,
    cfg: &ModelConfig,
    dropout: &mut Dropout<'_>,
) -> Result<ForwardOutput, ModelError> {
    if emb.dim() != cfg.d_plm {
        return Err(ModelError::DimensionMismatch(alloc::format!(
            "embedding width {} but model expects {}",
            emb.dim(),
            cfg.d_plm
        )));
    }
    let contents = node_contents(graph, emb, alignment)?;
    Ok(forward_contents(graph, &contents, params, cfg, dropout)?.0)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| libm::exp(x - m)).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}
