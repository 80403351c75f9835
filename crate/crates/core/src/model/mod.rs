//! The detector network.
//!
//! * node contents: EDU leaves average their token rows, relation nodes
//!   average the contents of all descendant leaves ([`node_contents`])
//! * bottleneck projection with a node-type embedding, layer norm and dropout
//!   ([`project_node_features`])
//! * `L` layers of relational message passing whose per-relation weights are
//!   combinations of shared basis matrices ([`rgcn_forward`],
//!   [`reconstruct_relation_weight`])
//! * root readout and a two-layer classification head ([`forward`])
//!
//! Gradients are computed by hand in [`backward`] and checked against finite
//! differences in the test suite.

mod backward;
mod forward;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use backward::backward;
pub use forward::{
    forward, forward_contents, init_node_features, node_contents, project_node_features, rgcn_forward, Dropout,
    ForwardCache, ForwardOutput,
};

use crate::graph::NUM_EDGE_RELATIONS;
use crate::linalg::Mat;
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation value.
    #[inline]
    pub fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Encoder embedding width.
    pub d_plm: usize,
    /// Bottleneck width of the projected node features.
    pub d_feat: usize,
    /// Message-passing width.
    pub hidden: usize,
    pub layers: usize,
    pub bases: usize,
    pub num_relations: usize,
    pub num_classes: usize,
    /// Width of the first head layer.
    pub head_hidden: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub layer_norm: bool,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Multiplier on the contrastive term (1.0 = plain sum of the two losses).
    pub contrastive_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_plm: 768,
            d_feat: 128,
            hidden: 512,
            layers: 2,
            bases: 10,
            num_relations: NUM_EDGE_RELATIONS,
            num_classes: crate::NUM_CLASSES,
            head_hidden: 512,
            dropout: 0.1,
            activation: Activation::Relu,
            layer_norm: true,
            temperature: 0.07,
            contrastive_weight: 1.0,
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.bases == 0 || self.bases > self.num_relations {
            return bad("bases must be in 1..=num_relations");
        }
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be > 0");
        }
        if self.d_plm == 0 || self.d_feat == 0 || self.hidden == 0 || self.head_hidden == 0 || self.num_classes < 2 {
            return bad("widths must be positive and num_classes >= 2");
        }
        Ok(())
    }

    /// `(input, output)` width of message-passing layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        if l == 0 {
            (self.d_feat, self.hidden)
        } else {
            (self.hidden, self.hidden)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `B` shared basis matrices, each `in × out`.
    pub bases: Vec<Mat>,
    /// `num_relations × B` combination coefficients.
    pub coeffs: Mat,
    /// Self-connection weight, `in × out`.
    pub self_weight: Mat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Row 0 non-leaf, row 1 leaf; width `d_plm`.
    pub type_embedding: Mat,
    pub proj_weight: Mat,
    pub proj_bias: Mat,
    pub ln_gain: Mat,
    pub ln_bias: Mat,
    pub layers: Vec<LayerParams>,
    pub head_in_weight: Mat,
    pub head_in_bias: Mat,
    pub head_out_weight: Mat,
    pub head_out_bias: Mat,
}

fn uniform_mat(rows: usize, cols: usize, fan_in: usize, rng: &mut SeededRng) -> Mat {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
    Mat::from_vec(rows, cols, data)
}

impl ModelParams {
    /// Seeded initialisation: fan-in scaled uniform weights, zero biases and
    /// type embeddings, unit layer-norm gain.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = SeededRng::derive(seed, 1);
        let proj_weight = uniform_mat(cfg.d_plm, cfg.d_feat, cfg.d_plm, &mut rng);
        let layers = (0..cfg.layers)
            .map(|l| {
                let (din, dout) = cfg.layer_dims(l);
                LayerParams {
                    bases: (0..cfg.bases).map(|_| uniform_mat(din, dout, din, &mut rng)).collect(),
                    coeffs: uniform_mat(cfg.num_relations, cfg.bases, cfg.bases, &mut rng),
                    self_weight: uniform_mat(din, dout, din, &mut rng),
                }
            })
            .collect();
        let head_in_weight = uniform_mat(cfg.hidden, cfg.head_hidden, cfg.hidden, &mut rng);
        let head_out_weight = uniform_mat(cfg.head_hidden, cfg.num_classes, cfg.head_hidden, &mut rng);
        let mut ln_gain = Mat::zeros(1, cfg.d_feat);
        ln_gain.fill(1.0);
        Ok(ModelParams {
            type_embedding: Mat::zeros(2, cfg.d_plm),
            proj_weight,
            proj_bias: Mat::zeros(1, cfg.d_feat),
            ln_gain,
            ln_bias: Mat::zeros(1, cfg.d_feat),
            layers,
            head_in_weight,
            head_in_bias: Mat::zeros(1, cfg.head_hidden),
            head_out_weight,
            head_out_bias: Mat::zeros(1, cfg.num_classes),
        })
    }

    /// All-zero tensor set with the same shapes (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        ModelParams {
            type_embedding: z(&self.type_embedding),
            proj_weight: z(&self.proj_weight),
            proj_bias: z(&self.proj_bias),
            ln_gain: z(&self.ln_gain),
            ln_bias: z(&self.ln_bias),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    bases: l.bases.iter().map(z).collect(),
                    coeffs: z(&l.coeffs),
                    self_weight: z(&l.self_weight),
                })
                .collect(),
            head_in_weight: z(&self.head_in_weight),
            head_in_bias: z(&self.head_in_bias),
            head_out_weight: z(&self.head_out_weight),
            head_out_bias: z(&self.head_out_bias),
        }
    }

    /// Tensors in a fixed order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = Vec::new();
        out.push(("type_embedding".into(), &self.type_embedding));
        out.push(("proj_weight".into(), &self.proj_weight));
        out.push(("proj_bias".into(), &self.proj_bias));
        out.push(("ln_gain".into(), &self.ln_gain));
        out.push(("ln_bias".into(), &self.ln_bias));
        for (l, layer) in self.layers.iter().enumerate() {
            for (k, b) in layer.bases.iter().enumerate() {
                out.push((alloc::format!("layer{l}.basis{k}"), b));
            }
            out.push((alloc::format!("layer{l}.coeffs"), &layer.coeffs));
            out.push((alloc::format!("layer{l}.self_weight"), &layer.self_weight));
        }
        out.push(("head.in_weight".into(), &self.head_in_weight));
        out.push(("head.in_bias".into(), &self.head_in_bias));
        out.push(("head.out_weight".into(), &self.head_out_weight));
        out.push(("head.out_bias".into(), &self.head_out_bias));
        out
    }

    /// Mutable tensors, same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out: Vec<&mut Mat> = Vec::new();
        out.push(&mut self.type_embedding);
        out.push(&mut self.proj_weight);
        out.push(&mut self.proj_bias);
        out.push(&mut self.ln_gain);
        out.push(&mut self.ln_bias);
        for layer in &mut self.layers {
            for b in &mut layer.bases {
                out.push(b);
            }
            out.push(&mut layer.coeffs);
            out.push(&mut layer.self_weight);
        }
        out.push(&mut self.head_in_weight);
        out.push(&mut self.head_in_bias);
        out.push(&mut self.head_out_weight);
        out.push(&mut self.head_out_bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Check tensor shapes against a config.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let expect = |name: &str, m: &Mat, r: usize, c: usize| {
            if m.shape() == (r, c) {
                Ok(())
            } else {
                Err(ModelError::DimensionMismatch(alloc::format!(
                    "{name} is {:?}, expected ({r}, {c})",
                    m.shape()
                )))
            }
        };
        expect("type_embedding", &self.type_embedding, 2, cfg.d_plm)?;
        expect("proj_weight", &self.proj_weight, cfg.d_plm, cfg.d_feat)?;
        expect("proj_bias", &self.proj_bias, 1, cfg.d_feat)?;
        expect("ln_gain", &self.ln_gain, 1, cfg.d_feat)?;
        expect("ln_bias", &self.ln_bias, 1, cfg.d_feat)?;
        if self.layers.len() != cfg.layers {
            return Err(ModelError::DimensionMismatch("layer count".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (din, dout) = cfg.layer_dims(l);
            if layer.bases.len() != cfg.bases {
                return Err(ModelError::DimensionMismatch("basis count".into()));
            }
            for b in &layer.bases {
                expect("basis", b, din, dout)?;
            }
            expect("coeffs", &layer.coeffs, cfg.num_relations, cfg.bases)?;
            expect("self_weight", &layer.self_weight, din, dout)?;
        }
        expect("head.in_weight", &self.head_in_weight, cfg.hidden, cfg.head_hidden)?;
        expect("head.in_bias", &self.head_in_bias, 1, cfg.head_hidden)?;
        expect("head.out_weight", &self.head_out_weight, cfg.head_hidden, cfg.num_classes)?;
        expect("head.out_bias", &self.head_out_bias, 1, cfg.num_classes)?;
        Ok(())
    }
}

/// `W_r = Σ_k α_rk V_k` for one layer. Relation weights are never stored.
pub fn reconstruct_relation_weight(layer: &LayerParams, relation: usize) -> Mat {
    let first = &layer.bases[0];
    let mut w = Mat::zeros(first.rows(), first.cols());
    for (k, basis) in layer.bases.iter().enumerate() {
        let a = layer.coeffs[(relation, k)];
        if a != 0.0 {
            w.scaled_add_assign(a, basis);
        }
    }
    w
}
