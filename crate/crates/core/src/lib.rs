//! Core algorithms for rhetorical-structure-aware detection of machine-generated
//! and human/LLM collaborative text.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded
//! anywhere; file formats, caches, subprocess hooks and the command line live
//! in the companion `race` crate.
//!
//! Pipeline, bottom-up:
//!
//! * [`rst`] / [`segment`]: discourse trees and the fallback sentence segmenter
//! * [`embed`]: token embeddings and EDU span alignment
//! * [`graph`]: tree to multi-relational graph
//! * [`model`]: descendant span pooling, bottleneck projection, relational
//!   message passing with basis decomposition, root readout and head
//! * [`objectives`]: supervised contrastive + cross-entropy loss
//! * [`train`]: mini-batch optimisation with validation-based selection
//! * [`metrics`] / [`analysis`]: evaluation and rhetorical fingerprinting
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod dataset;
pub mod embed;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod relation;
pub mod rng;
pub mod rst;
pub mod segment;
pub mod synth;
pub mod train;

pub use graph::LogicGraph;
pub use model::{ModelConfig, ModelParams};
pub use relation::RelationLabel;
pub use rst::RstTree;

/// Number of detection classes.
pub const NUM_CLASSES: usize = 4;
