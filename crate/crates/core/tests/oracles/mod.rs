//! Independent reference implementations. Deliberately naive: explicit loops,
//! no shared helpers with the library beyond plain data types.
#![allow(dead_code)]

use race_core::embed::TokenEmbeddingMatrix;
use race_core::graph::{Edge, LogicGraph, NodeKind};
use race_core::linalg::Mat;
use race_core::model::{Activation, LayerParams, ModelConfig, ModelParams};
use race_core::rng::SeededRng;
use race_core::rst::{EduNode, InternalNode, RstTree};
use race_core::RelationLabel;

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::Identity => x,
    }
}

pub fn random_mat(rows: usize, cols: usize, rng: &mut SeededRng) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
}

/// A random multi-relational graph, no self-loops. Children links come from
/// forward-relation edges into internal nodes, as `from_parts` reads them.
pub fn random_graph(rng: &mut SeededRng, max_nodes: usize, max_relations: usize) -> LogicGraph {
    let n = 2 + rng.below(max_nodes - 1);
    let r = 1 + rng.below(max_relations);
    let nodes: Vec<NodeKind> = (0..n)
        .map(|i| {
            if rng.uniform() < 0.5 {
                NodeKind::Leaf { edu: i }
            } else {
                NodeKind::Internal { relation: RelationLabel::ALL[rng.below(18)] }
            }
        })
        .collect();
    let m = rng.below(3 * n);
    let mut edges = Vec::new();
    for _ in 0..m {
        let src = rng.below(n);
        let mut dst = rng.below(n);
        if dst == src {
            dst = (dst + 1) % n;
        }
        edges.push(Edge { src, relation: rng.below(r), dst });
    }
    LogicGraph::from_parts(nodes, edges, rng.below(n), r).unwrap()
}

pub fn random_layer(din: usize, dout: usize, relations: usize, bases: usize, rng: &mut SeededRng) -> LayerParams {
    LayerParams {
        bases: (0..bases).map(|_| random_mat(din, dout, rng)).collect(),
        coeffs: random_mat(relations, bases, rng),
        self_weight: random_mat(din, dout, rng),
    }
}

/// `W_r = Σ_k α_rk V_k`, one scalar at a time.
pub fn dense_relation_weight(layer: &LayerParams, r: usize) -> Mat {
    let (din, dout) = layer.self_weight.shape();
    let mut w = Mat::zeros(din, dout);
    for a in 0..din {
        for b in 0..dout {
            let mut s = 0.0;
            for k in 0..layer.bases.len() {
                s += layer.coeffs[(r, k)] * layer.bases[k][(a, b)];
            }
            w[(a, b)] = s;
        }
    }
    w
}

/// Message passing by nodes × relations × neighbours, with explicit weights.
pub fn naive_rgcn(graph: &LogicGraph, h: &Mat, layer: &LayerParams, activation: Activation) -> Mat {
    let n = graph.num_nodes();
    let (din, dout) = layer.self_weight.shape();
    let weights: Vec<Mat> = (0..graph.num_relations()).map(|r| dense_relation_weight(layer, r)).collect();
    let mut out = Mat::zeros(n, dout);
    for i in 0..n {
        let mut acc = vec![0.0; dout];
        for b in 0..dout {
            for a in 0..din {
                acc[b] += h[(i, a)] * layer.self_weight[(a, b)];
            }
        }
        for r in 0..graph.num_relations() {
            let nbrs: Vec<usize> =
                graph.edges().iter().filter(|e| e.dst == i && e.relation == r).map(|e| e.src).collect();
            if nbrs.is_empty() {
                continue;
            }
            let c = nbrs.len() as f64;
            for &j in &nbrs {
                for b in 0..dout {
                    let mut s = 0.0;
                    for a in 0..din {
                        s += h[(j, a)] * weights[r][(a, b)];
                    }
                    acc[b] += s / c;
                }
            }
        }
        for b in 0..dout {
            out[(i, b)] = act(activation, acc[b]);
        }
    }
    out
}

fn tree_leaves(tree: &RstTree, id: usize, out: &mut Vec<usize>) {
    if let Some(node) = tree.internals().iter().find(|n| n.id == id) {
        tree_leaves(tree, node.left, out);
        tree_leaves(tree, node.right, out);
    } else {
        let pos = tree.edus().iter().position(|e| e.id == id).expect("leaf id");
        out.push(pos);
    }
}

/// EDU positions under `id`, found by walking the source tree.
pub fn source_leaves(tree: &RstTree, id: usize) -> Vec<usize> {
    let mut v = Vec::new();
    tree_leaves(tree, id, &mut v);
    v
}

/// Mean token row per EDU: a token counts for the EDU whose character span
/// contains its start offset.
pub fn leaf_contents_oracle(tree: &RstTree, emb: &TokenEmbeddingMatrix) -> Vec<Vec<f64>> {
    let d = emb.dim();
    tree.edus()
        .iter()
        .map(|e| {
            let mut acc = vec![0.0; d];
            let mut c = 0;
            for (t, tok) in emb.offsets().iter().enumerate() {
                if tok.start >= e.start && tok.start < e.end {
                    for j in 0..d {
                        acc[j] += emb.embeddings()[(t, j)];
                    }
                    c += 1;
                }
            }
            assert!(c > 0, "oracle fixture EDUs must own a token");
            acc.iter().map(|x| x / c as f64).collect()
        })
        .collect()
}

/// Content of tree node `id`: its leaf's row, or the mean over all leaves
/// reachable in the source tree.
pub fn content_oracle(tree: &RstTree, leaf_rows: &[Vec<f64>], id: usize) -> Vec<f64> {
    let leaves = source_leaves(tree, id);
    let d = leaf_rows[0].len();
    let mut acc = vec![0.0; d];
    for &l in &leaves {
        for j in 0..d {
            acc[j] += leaf_rows[l][j];
        }
    }
    acc.iter().map(|x| x / leaves.len() as f64).collect()
}

pub fn softmax_oracle(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Inference-mode forward from node contents, composed from the oracles
/// above and the textbook projection / layer norm / head formulas.
pub fn forward_oracle(graph: &LogicGraph, contents: &Mat, p: &ModelParams, cfg: &ModelConfig) -> (Vec<f64>, Vec<f64>) {
    let n = graph.num_nodes();
    let mut h = Mat::zeros(n, cfg.d_feat);
    for v in 0..n {
        let t = if graph.nodes()[v].is_leaf() { 1 } else { 0 };
        let mut x = vec![0.0; cfg.d_feat];
        for b in 0..cfg.d_feat {
            let mut s = p.proj_bias[(0, b)];
            for a in 0..cfg.d_plm {
                s += (contents[(v, a)] + p.type_embedding[(t, a)]) * p.proj_weight[(a, b)];
            }
            x[b] = s;
        }
        if cfg.layer_norm {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
            for b in 0..cfg.d_feat {
                x[b] = (x[b] - mean) / (var + 1e-5).sqrt() * p.ln_gain[(0, b)] + p.ln_bias[(0, b)];
            }
        }
        for b in 0..cfg.d_feat {
            h[(v, b)] = x[b];
        }
    }
    for layer in &p.layers {
        h = naive_rgcn(graph, &h, layer, cfg.activation);
    }
    let z: Vec<f64> = h.row(graph.root()).to_vec();
    let mut hid = vec![0.0; cfg.head_hidden];
    for b in 0..cfg.head_hidden {
        let mut s = p.head_in_bias[(0, b)];
        for a in 0..cfg.hidden {
            s += z[a] * p.head_in_weight[(a, b)];
        }
        hid[b] = act(cfg.activation, s);
    }
    let mut logits = vec![0.0; cfg.num_classes];
    for c in 0..cfg.num_classes {
        let mut s = p.head_out_bias[(0, c)];
        for a in 0..cfg.head_hidden {
            s += hid[a] * p.head_out_weight[(a, c)];
        }
        logits[c] = s;
    }
    (z, softmax_oracle(&logits))
}

/// Fraction of (positive, negative) pairs ordered correctly, ties half.
pub fn auroc_pairwise(scores: &[f64], targets: &[bool]) -> Option<f64> {
    let mut good = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if !targets[i] {
            continue;
        }
        for j in 0..scores.len() {
            if targets[j] {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                good += 1.0;
            } else if scores[i] == scores[j] {
                good += 0.5;
            }
        }
    }
    if pairs == 0.0 {
        None
    } else {
        Some(good / pairs)
    }
}

/// Scan candidate thresholds from the top down; the last one whose FPR is
/// within the cap is the smallest feasible threshold.
pub fn tpr_scan(scores: &[f64], targets: &[bool], cap: f64) -> Option<(f64, f64)> {
    let p = targets.iter().filter(|&&t| t).count();
    let n = targets.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut cands: Vec<f64> = scores.to_vec();
    cands.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cands.dedup();
    cands.insert(0, f64::INFINITY);
    let count = |t: f64, want: bool| scores.iter().zip(targets).filter(|(&s, &y)| y == want && s >= t).count();
    let mut best = f64::INFINITY;
    for &t in &cands {
        if count(t, false) as f64 / n as f64 <= cap {
            best = t;
        } else {
            break;
        }
    }
    Some((best, count(best, true) as f64 / p as f64))
}

pub fn one_vs_rest(probs: &Mat, labels: &[usize], c: usize) -> (Vec<f64>, Vec<bool>) {
    ((0..probs.rows()).map(|i| probs[(i, c)]).collect(), labels.iter().map(|&l| l == c).collect())
}

/// SupCon by enumerating anchors, positives and candidates.
pub fn supcon_enum(emb: &Mat, labels: &[usize], tau: f64) -> f64 {
    let n = emb.rows();
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = emb.row(i);
            let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| x / nr).collect()
        })
        .collect();
    let sim = |a: usize, b: usize| unit[a].iter().zip(&unit[b]).map(|(x, y)| x * y).sum::<f64>() / tau;
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| sim(i, a).exp()).sum();
        let mut li = 0.0;
        for &p in &pos {
            li += -(sim(i, p).exp() / denom).ln();
        }
        total += li / pos.len() as f64;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

pub fn ce_enum(probs: &Mat, labels: &[usize]) -> f64 {
    labels.iter().enumerate().map(|(i, &y)| -probs[(i, y)].max(1e-12).ln()).sum::<f64>() / labels.len() as f64
}

/// Davies-Bouldin and Calinski-Harabasz straight from their definitions.
pub fn cluster_oracle(x: &Mat, labels: &[usize]) -> (f64, f64) {
    let n = x.rows();
    let d = x.cols();
    let mut ks: Vec<usize> = labels.to_vec();
    ks.sort();
    ks.dedup();
    let k = ks.len();
    let members: Vec<Vec<usize>> = ks.iter().map(|&c| (0..n).filter(|&i| labels[i] == c).collect()).collect();
    let centroid = |m: &Vec<usize>| -> Vec<f64> {
        (0..d).map(|j| m.iter().map(|&i| x[(i, j)]).sum::<f64>() / m.len() as f64).collect()
    };
    let cents: Vec<Vec<f64>> = members.iter().map(centroid).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let s: Vec<f64> = (0..k)
        .map(|c| members[c].iter().map(|&i| dist(x.row(i), &cents[c])).sum::<f64>() / members[c].len() as f64)
        .collect();
    let mut db = 0.0;
    for i in 0..k {
        let mut m = f64::MIN;
        for j in 0..k {
            if i != j {
                m = m.max((s[i] + s[j]) / dist(&cents[i], &cents[j]));
            }
        }
        db += m;
    }
    db /= k as f64;
    let all: Vec<usize> = (0..n).collect();
    let g = centroid(&all);
    let b: f64 = (0..k).map(|c| members[c].len() as f64 * dist(&cents[c], &g).powi(2)).sum();
    let w: f64 = (0..k).map(|c| members[c].iter().map(|&i| dist(x.row(i), &cents[c]).powi(2)).sum::<f64>()).sum();
    (db, (b / (k - 1) as f64) / (w / (n - k) as f64))
}

/// The hand-drawn five-EDU tree:
///
/// ```text
///            Background(8)
///           /            \
///     Attribution(7)      e4
///     /          \
///   e0         Joint(6)
///             /       \
///         Joint(5)     e3
///         /     \
///       e1      e2
/// ```
pub fn five_edu_fixture() -> RstTree {
    let pieces = ["Critics said", " the plan works,", " and costs fell,", " and jobs grew", " after the reform."];
    let mut text = String::new();
    let mut edus = Vec::new();
    for (i, p) in pieces.iter().enumerate() {
        let start = text.chars().count();
        text.push_str(p);
        edus.push(EduNode { id: i, start, end: text.chars().count() });
    }
    let internals = vec![
        InternalNode { id: 5, relation: RelationLabel::Joint, left: 1, right: 2 },
        InternalNode { id: 6, relation: RelationLabel::Joint, left: 5, right: 3 },
        InternalNode { id: 7, relation: RelationLabel::Attribution, left: 0, right: 6 },
        InternalNode { id: 8, relation: RelationLabel::Background, left: 7, right: 4 },
    ];
    RstTree::new("fixture-5", text, edus, internals, 8).unwrap()
}

/// Small model shape for oracle and gradient tests.
pub fn tiny_config(activation: Activation) -> ModelConfig {
    ModelConfig {
        d_plm: 8,
        d_feat: 6,
        hidden: 5,
        head_hidden: 4,
        layers: 2,
        bases: 3,
        dropout: 0.0,
        activation,
        temperature: 0.5,
        ..ModelConfig::default()
    }
}

/// Seeded parameters with every tensor, biases and type rows included,
/// drawn away from zero.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(cfg, seed).unwrap();
    let mut rng = SeededRng::new(seed ^ 0x9e37);
    for t in p.tensors_mut() {
        for x in t.as_mut_slice() {
            *x = rng.uniform_range(-0.8, 0.8);
        }
    }
    for x in p.ln_gain.as_mut_slice() {
        *x = 1.0 + 0.3 * rng.uniform_range(-1.0, 1.0);
    }
    p
}
