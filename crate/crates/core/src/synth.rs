//! Synthetic trees and corpora with planted rhetorical signatures.
//!
//! Used for tests, the end-to-end smoke run and `race synth`. The text of a
//! synthetic document is drawn from one shared vocabulary regardless of its
//! class, so the only class signal is the relation labels.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{Domain, Label, Record};
use crate::linalg::Mat;
use crate::relation::{RelationLabel, NUM_RELATIONS};
use crate::rng::SeededRng;
use crate::rst::{EduNode, InternalNode, RstTree, TreeError};

const VOCAB: [&str; 24] = [
    "the", "model", "study", "result", "claim", "city", "river", "report", "data", "value", "team", "plan",
    "shows", "finds", "makes", "holds", "many", "some", "new", "old", "early", "late", "here", "there",
];

/// One sentence per leaf, words drawn uniformly from a shared vocabulary.
/// Returns the text and the `[start, end)` character span of each sentence.
pub fn random_text(n_sentences: usize, rng: &mut SeededRng) -> (String, Vec<(usize, usize)>) {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(n_sentences);
    for i in 0..n_sentences {
        let start = text.len();
        if i > 0 {
            text.push(' ');
        }
        let words = 3 + rng.below(4);
        for w in 0..words {
            if w > 0 {
                text.push(' ');
            }
            text.push_str(VOCAB[rng.below(VOCAB.len())]);
        }
        text.push('.');
        spans.push((start, text.len()));
    }
    (text, spans)
}

/// A random binary tree over `n_leaves` sentences.
///
/// Splits are uniform over split points; each internal node's relation comes
/// from `pick`. Leaves get ids `0..n`, internals `n..2n-1` in creation order.
pub fn random_tree(
    doc_id: &str,
    n_leaves: usize,
    rng: &mut SeededRng,
    mut pick: impl FnMut(&mut SeededRng) -> RelationLabel,
) -> Result<RstTree, TreeError> {
    if n_leaves == 0 {
        return Err(TreeError::EmptyDocument);
    }
    let (text, spans) = random_text(n_leaves, rng);
    let edus: Vec<EduNode> = spans.iter().enumerate().map(|(i, &(start, end))| EduNode { id: i, start, end }).collect();
    let mut internals = Vec::with_capacity(n_leaves - 1);
    let root = build(0, n_leaves, n_leaves, rng, &mut pick, &mut internals);
    RstTree::new(doc_id, text, edus, internals, root)
}

fn build(
    lo: usize,
    hi: usize,
    n: usize,
    rng: &mut SeededRng,
    pick: &mut impl FnMut(&mut SeededRng) -> RelationLabel,
    out: &mut Vec<InternalNode>,
) -> usize {
    if hi - lo == 1 {
        return lo;
    }
    let mid = lo + 1 + rng.below(hi - lo - 1);
    let left = build(lo, mid, n, rng, pick, out);
    let right = build(mid, hi, n, rng, pick, out);
    let id = n + out.len();
    let relation = pick(rng);
    out.push(InternalNode { id, relation, left, right });
    id
}

/// Relations reserved for each class, in [`Label::ALL`] order. The four
/// sets are disjoint; Cause and Comparison belong to no class.
pub const PLANTED: [[RelationLabel; 4]; 4] = [
    [RelationLabel::Attribution, RelationLabel::Background, RelationLabel::Condition, RelationLabel::Enablement],
    [RelationLabel::Contrast, RelationLabel::Evaluation, RelationLabel::Explanation, RelationLabel::Joint],
    [RelationLabel::Elaboration, RelationLabel::MannerMeans, RelationLabel::Summary, RelationLabel::Temporal],
    [RelationLabel::TopicChange, RelationLabel::TopicComment, RelationLabel::SameUnit, RelationLabel::TextualOrganization],
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub docs_per_class: usize,
    pub min_leaves: usize,
    pub max_leaves: usize,
    /// Probability that an internal node draws from its class's planted set
    /// rather than from all 18 relations.
    pub purity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { docs_per_class: 100, min_leaves: 6, max_leaves: 14, purity: 0.95, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDoc {
    pub record: Record,
    pub tree: RstTree,
}

/// Four-class corpus, classes interleaved, domains assigned round-robin.
/// Every document is its own group.
pub fn synthetic_corpus(cfg: &SynthConfig) -> Vec<SynthDoc> {
    let mut rng = SeededRng::derive(cfg.seed, 11);
    let mut out = Vec::with_capacity(4 * cfg.docs_per_class);
    for i in 0..cfg.docs_per_class {
        for label in Label::ALL {
            let k = label.index();
            let id = alloc::format!("synth/{}/{i:04}", label.name());
            let n = cfg.min_leaves + rng.below(cfg.max_leaves - cfg.min_leaves + 1);
            let purity = cfg.purity;
            let tree = random_tree(&id, n, &mut rng, |r| {
                if r.uniform() < purity {
                    PLANTED[k][r.below(4)]
                } else {
                    RelationLabel::ALL[r.below(NUM_RELATIONS)]
                }
            })
            .expect("generated trees are valid");
            let domain = Domain::ALL[(i * 4 + k) % 4];
            let record = Record {
                id: id.clone(),
                text: String::from(tree.document()),
                domain,
                label,
                group_id: id,
                content_source: String::new(),
                language_source: String::new(),
            };
            out.push(SynthDoc { record, tree });
        }
    }
    out
}

/// Nearest-centroid oracle over relative relation frequencies.
///
/// Centroids are fitted on `train`; the score of class `c` for a test
/// document is the negated Euclidean distance to centroid `c`.
pub fn nearest_centroid_scores(train: &[([u32; NUM_RELATIONS], usize)], test: &[[u32; NUM_RELATIONS]]) -> Mat {
    let classes = train.iter().map(|t| t.1 + 1).max().unwrap_or(0);
    let mut centroids = Mat::zeros(classes, NUM_RELATIONS);
    let mut counts = alloc::vec![0usize; classes];
    for (c, y) in train {
        if let Some(f) = crate::analysis::relative_frequencies(c) {
            crate::linalg::axpy(1.0, &f, centroids.row_mut(*y));
            counts[*y] += 1;
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n > 0 {
            centroids.row_mut(k).iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    let mut scores = Mat::zeros(test.len(), classes);
    for (i, c) in test.iter().enumerate() {
        let f = crate::analysis::relative_frequencies(c).unwrap_or([0.0; NUM_RELATIONS]);
        for k in 0..classes {
            let d: f64 = centroids.row(k).iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
            scores[(i, k)] = -libm::sqrt(d);
        }
    }
    scores
}
