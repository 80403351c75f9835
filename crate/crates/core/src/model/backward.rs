use alloc::vec;
use alloc::vec::Vec;

use super::forward::{edge_norms, ForwardCache};
use super::{ModelConfig, ModelParams};
use crate::graph::LogicGraph;
use crate::linalg::{axpy, dot, Mat};

fn mask_in_place(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
    }
}

/// Accumulate parameter gradients for one document into `grads`.
///
/// `d_z` is the loss gradient with respect to the root state `z` (from the
/// contrastive term) and `d_logits` the gradient with respect to the head's
/// pre-softmax output.
pub fn backward(
    graph: &LogicGraph,
    cache: &ForwardCache,
    params: &ModelParams,
    cfg: &ModelConfig,
    d_z: &[f64],
    d_logits: &[f64],
    grads: &mut ModelParams,
) {
    // head, output layer
    let mut hidden_in = cache.head_hidden.clone();
    mask_in_place(&mut hidden_in, &cache.drop_head_out);
    for (i, &h) in hidden_in.iter().enumerate() {
        if h != 0.0 {
            axpy(h, d_logits, grads.head_out_weight.row_mut(i));
        }
    }
    axpy(1.0, d_logits, grads.head_out_bias.row_mut(0));
    let mut d_hidden: Vec<f64> = (0..hidden_in.len()).map(|i| dot(params.head_out_weight.row(i), d_logits)).collect();
    mask_in_place(&mut d_hidden, &cache.drop_head_out);
    let d_head_pre: Vec<f64> =
        d_hidden.iter().zip(&cache.head_pre).map(|(g, &p)| g * cfg.activation.grad(p)).collect();

    // head, input layer
    let mut z_in = cache.z.clone();
    mask_in_place(&mut z_in, &cache.drop_head_in);
    for (i, &zi) in z_in.iter().enumerate() {
        if zi != 0.0 {
            axpy(zi, &d_head_pre, grads.head_in_weight.row_mut(i));
        }
    }
    axpy(1.0, &d_head_pre, grads.head_in_bias.row_mut(0));
    let mut d_zin: Vec<f64> = (0..z_in.len()).map(|i| dot(params.head_in_weight.row(i), &d_head_pre)).collect();
    mask_in_place(&mut d_zin, &cache.drop_head_in);
    axpy(1.0, d_z, &mut d_zin);

    // message passing, last layer first
    let n = graph.num_nodes();
    let norms = edge_norms(graph);
    let last = params.layers.len() - 1;
    let mut d_h = Mat::zeros(n, cache.pre_activations[last].cols());
    d_h.row_mut(graph.root()).copy_from_slice(&d_zin);
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let glayer = &mut grads.layers[l];
        let pre = &cache.pre_activations[l];
        let input = &cache.layer_inputs[l];
        let mut d_pre = d_h;
        for (g, &p) in d_pre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            *g *= cfg.activation.grad(p);
        }
        glayer.self_weight.add_assign(&input.t_matmul(&d_pre));
        let mut d_in = d_pre.matmul_t(&layer.self_weight);
        for (k, basis) in layer.bases.iter().enumerate() {
            let agg = &cache.aggregates[l][k];
            glayer.bases[k].add_assign(&agg.t_matmul(&d_pre));
            let d_agg = d_pre.matmul_t(basis);
            for (e, &norm) in graph.edges().iter().zip(&norms) {
                let g_dst = d_agg.row(e.dst);
                glayer.coeffs[(e.relation, k)] += norm * dot(g_dst, input.row(e.src));
                let c = layer.coeffs[(e.relation, k)] * norm;
                if c != 0.0 {
                    axpy(c, g_dst, d_in.row_mut(e.src));
                }
            }
        }
        d_h = d_in;
    }

    // dropout, layer norm, projection, type embedding
    let d = cache.projected.cols();
    let mut d_proj = Mat::zeros(n, d);
    for v in 0..n {
        let mut g = d_h.row(v).to_vec();
        mask_in_place(&mut g, &cache.drop0[v]);
        if cfg.layer_norm {
            let hat = cache.ln_hat.row(v);
            let mut d_hat = vec![0.0; d];
            for j in 0..d {
                grads.ln_gain[(0, j)] += g[j] * hat[j];
                grads.ln_bias[(0, j)] += g[j];
                d_hat[j] = g[j] * params.ln_gain[(0, j)];
            }
            let mean_d = d_hat.iter().sum::<f64>() / d as f64;
            let mean_dx = dot(&d_hat, hat) / d as f64;
            let inv = cache.ln_inv_std[v];
            let out = d_proj.row_mut(v);
            for j in 0..d {
                out[j] = inv * (d_hat[j] - mean_d - hat[j] * mean_dx);
            }
        } else {
            d_proj.row_mut(v).copy_from_slice(&g);
        }
    }
    let mut typed = cache.contents.clone();
    for (v, &t) in cache.types.iter().enumerate() {
        axpy(1.0, params.type_embedding.row(t), typed.row_mut(v));
    }
    grads.proj_weight.add_assign(&typed.t_matmul(&d_proj));
    for v in 0..n {
        axpy(1.0, d_proj.row(v), grads.proj_bias.row_mut(0));
    }
    let d_typed = d_proj.matmul_t(&params.proj_weight);
    for (v, &t) in cache.types.iter().enumerate() {
        axpy(1.0, d_typed.row(v), grads.type_embedding.row_mut(t));
    }
}
