//! Rhetorical-structure trees as produced by an external discourse parser.
//!
//! A tree arrives as a [`TreeRecord`] (the on-disk line format) and becomes a
//! validated [`RstTree`] through [`load_tree`]. EDU spans are character
//! offsets (Unicode scalar values, not bytes) into the record's own text.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::relation::{RelationLabel, NUM_RELATIONS};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("malformed tree record: {0}")]
    Schema(String),
    #[error("unknown rhetorical relation `{0}`")]
    UnknownRelation(String),
    #[error("bad EDU span: {0}")]
    Span(String),
    #[error("empty document")]
    EmptyDocument,
}

/// One line of the tree file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub doc_id: String,
    pub text: String,
    pub edus: Vec<EduRecord>,
    #[serde(default)]
    pub internals: Vec<InternalRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_id: Option<NodeId>,
    /// Roots of a parser forest, merged on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roots: Option<Vec<NodeId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuclearity: Option<Vec<NuclearityMark>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EduRecord {
    pub id: NodeId,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternalRecord {
    pub id: NodeId,
    pub relation: String,
    pub left: NodeId,
    pub right: NodeId,
}

/// Nucleus/satellite marking of an internal node (`"NS"`, `"SN"`, `"NN"`).
/// Carried through serialization, never read by the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuclearityMark {
    pub id: NodeId,
    pub value: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EduNode {
    pub id: NodeId,
    /// Inclusive character offset.
    pub start: usize,
    /// Exclusive character offset.
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternalNode {
    pub id: NodeId,
    pub relation: RelationLabel,
    pub left: NodeId,
    pub right: NodeId,
}

/// A validated binary discourse tree.
///
/// Invariants (checked by [`load_tree`] and by every constructor):
/// one root, every internal has two children, `internals.len() == edus.len() - 1`,
/// and the in-order leaf sequence is the EDU list in character order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RstTree {
    doc_id: String,
    document: String,
    edus: Vec<EduNode>,
    internals: Vec<InternalNode>,
    root: NodeId,
    nuclearity: Option<Vec<NuclearityMark>>,
    truncated: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRef {
    Leaf(usize),
    Internal(usize),
}

impl RstTree {
    /// Build and validate a tree from already-typed parts.
    pub fn new(
        doc_id: impl Into<String>,
        document: impl Into<String>,
        edus: Vec<EduNode>,
        internals: Vec<InternalNode>,
        root: NodeId,
    ) -> Result<Self, TreeError> {
        let tree = RstTree {
            doc_id: doc_id.into(),
            document: document.into(),
            edus,
            internals,
            root,
            nuclearity: None,
            truncated: None,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn document(&self) -> &str {
        &self.document
    }

    pub fn edus(&self) -> &[EduNode] {
        &self.edus
    }

    pub fn internals(&self) -> &[InternalNode] {
        &self.internals
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nuclearity(&self) -> Option<&[NuclearityMark]> {
        self.nuclearity.as_deref()
    }

    pub fn truncated(&self) -> Option<bool> {
        self.truncated
    }

    pub fn num_leaves(&self) -> usize {
        self.edus.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.edus.len() + self.internals.len()
    }

    /// Text of EDU `i` (position in [`edus`](Self::edus)).
    pub fn edu_text(&self, i: usize) -> &str {
        let e = self.edus[i];
        slice_chars(&self.document, e.start, e.end)
    }

    pub fn lookup(&self, id: NodeId) -> Option<NodeRef> {
        if let Some(i) = self.edus.iter().position(|e| e.id == id) {
            return Some(NodeRef::Leaf(i));
        }
        self.internals.iter().position(|n| n.id == id).map(NodeRef::Internal)
    }

    /// Component `j` counts internals labelled with relation `j`.
    pub fn relation_frequency_vector(&self) -> [u32; NUM_RELATIONS] {
        let mut v = [0u32; NUM_RELATIONS];
        for n in &self.internals {
            v[n.relation.index()] += 1;
        }
        v
    }

    /// Same tree with ids replaced through `map` (must be injective over the
    /// tree's ids). Used to check that downstream consumers ignore raw ids.
    pub fn relabel(&self, map: impl Fn(NodeId) -> NodeId) -> Result<Self, TreeError> {
        let edus = self.edus.iter().map(|e| EduNode { id: map(e.id), ..*e }).collect();
        let internals = self
            .internals
            .iter()
            .map(|n| InternalNode {
                id: map(n.id),
                relation: n.relation,
                left: map(n.left),
                right: map(n.right),
            })
            .collect();
        let mut t = RstTree::new(self.doc_id.clone(), self.document.clone(), edus, internals, map(self.root))?;
        t.truncated = self.truncated;
        t.nuclearity = self.nuclearity.as_ref().map(|marks| {
            marks
                .iter()
                .map(|m| NuclearityMark { id: map(m.id), value: m.value.clone() })
                .collect()
        });
        Ok(t)
    }

    pub fn to_record(&self) -> TreeRecord {
        TreeRecord {
            doc_id: self.doc_id.clone(),
            text: self.document.clone(),
            edus: self.edus.iter().map(|e| EduRecord { id: e.id, start: e.start, end: e.end }).collect(),
            internals: self
                .internals
                .iter()
                .map(|n| InternalRecord {
                    id: n.id,
                    relation: n.relation.name().to_string(),
                    left: n.left,
                    right: n.right,
                })
                .collect(),
            root_id: Some(self.root),
            roots: None,
            nuclearity: self.nuclearity.clone(),
            truncated: self.truncated,
        }
    }

    fn validate(&self) -> Result<(), TreeError> {
        if self.document.is_empty() {
            return Err(TreeError::EmptyDocument);
        }
        if self.edus.is_empty() {
            return Err(TreeError::Schema("tree has no EDUs".into()));
        }
        let doc_len = self.document.chars().count();
        let mut prev_end = 0usize;
        for (i, e) in self.edus.iter().enumerate() {
            if e.start >= e.end || e.end > doc_len {
                return Err(TreeError::Span(alloc::format!(
                    "EDU {} has span [{}, {}) outside 0..{}",
                    e.id,
                    e.start,
                    e.end,
                    doc_len
                )));
            }
            if i > 0 && e.start < prev_end {
                return Err(TreeError::Span(alloc::format!(
                    "EDU {} starts at {} before previous EDU ends at {}",
                    e.id,
                    e.start,
                    prev_end
                )));
            }
            prev_end = e.end;
        }

        let mut ids = BTreeSet::new();
        for id in self.edus.iter().map(|e| e.id).chain(self.internals.iter().map(|n| n.id)) {
            if !ids.insert(id) {
                return Err(TreeError::Schema(alloc::format!("duplicate node id {id}")));
            }
        }

        let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        for n in &self.internals {
            for child in [n.left, n.right] {
                if !ids.contains(&child) {
                    return Err(TreeError::Schema(alloc::format!(
                        "internal {} references missing child {child}",
                        n.id
                    )));
                }
                if child == n.id {
                    return Err(TreeError::Schema(alloc::format!("internal {} is its own child", n.id)));
                }
                if parent.insert(child, n.id).is_some() {
                    return Err(TreeError::Schema(alloc::format!("node {child} has two parents")));
                }
            }
        }
        if n_roots(&ids, &parent) != 1 {
            return Err(TreeError::Schema(alloc::format!(
                "expected exactly one root, found {}",
                n_roots(&ids, &parent)
            )));
        }
        if parent.contains_key(&self.root) || !ids.contains(&self.root) {
            return Err(TreeError::Schema(alloc::format!("root_id {} is not the tree root", self.root)));
        }
        if self.internals.len() + 1 != self.edus.len() {
            return Err(TreeError::Schema(alloc::format!(
                "{} internals for {} EDUs; a binary tree needs {}",
                self.internals.len(),
                self.edus.len(),
                self.edus.len() - 1
            )));
        }

        // In-order walk from the root must visit every node once and list the
        // leaves in EDU order.
        let order = self.leaf_order()?;
        let expected: Vec<NodeId> = self.edus.iter().map(|e| e.id).collect();
        if order != expected {
            return Err(TreeError::Span("in-order leaves do not follow EDU character order".into()));
        }
        Ok(())
    }

    /// Leaf ids in left-to-right tree order.
    pub fn leaf_order(&self) -> Result<Vec<NodeId>, TreeError> {
        let mut out = Vec::with_capacity(self.edus.len());
        let mut visited = 0usize;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            visited += 1;
            if visited > self.num_nodes() {
                return Err(TreeError::Schema("cycle in tree".into()));
            }
            match self.lookup(id) {
                Some(NodeRef::Leaf(_)) => out.push(id),
                Some(NodeRef::Internal(i)) => {
                    let n = self.internals[i];
                    stack.push(n.right);
                    stack.push(n.left);
                }
                None => return Err(TreeError::Schema(alloc::format!("dangling node {id}"))),
            }
        }
        if visited != self.num_nodes() {
            return Err(TreeError::Schema("nodes unreachable from root".into()));
        }
        Ok(out)
    }
}

fn n_roots(ids: &BTreeSet<NodeId>, parent: &BTreeMap<NodeId, NodeId>) -> usize {
    ids.iter().filter(|id| !parent.contains_key(id)).count()
}

/// Slice `s` by character offsets. Offsets past the end are clamped.
pub fn slice_chars(s: &str, start: usize, end: usize) -> &str {
    let byte_at = |c: usize| s.char_indices().nth(c).map_or(s.len(), |(b, _)| b);
    let b0 = byte_at(start);
    let b1 = byte_at(end);
    &s[b0..b1.max(b0)]
}

/// Deserialize and validate one parser output record.
///
/// A record describing a forest (several parentless nodes, or an explicit
/// `roots` list) is joined into a single tree by right-branching
/// `Textual-organization` nodes with fresh ids.
pub fn load_tree(record: TreeRecord) -> Result<RstTree, TreeError> {
    let TreeRecord { doc_id, text, edus, internals, root_id, roots, nuclearity, truncated } = record;
    if text.is_empty() {
        return Err(TreeError::EmptyDocument);
    }
    let edus: Vec<EduNode> = edus.into_iter().map(|e| EduNode { id: e.id, start: e.start, end: e.end }).collect();
    let mut internals = internals
        .into_iter()
        .map(|n| {
            let relation = n.relation.parse().map_err(|_| TreeError::UnknownRelation(n.relation.clone()))?;
            Ok(InternalNode { id: n.id, relation, left: n.left, right: n.right })
        })
        .collect::<Result<Vec<_>, TreeError>>()?;

    let ids: BTreeSet<NodeId> = edus.iter().map(|e| e.id).chain(internals.iter().map(|n| n.id)).collect();
    let children: BTreeSet<NodeId> = internals.iter().flat_map(|n| [n.left, n.right]).collect();
    let parentless: Vec<NodeId> = ids.iter().copied().filter(|id| !children.contains(id)).collect();

    let forest_roots = match roots {
        Some(r) if r.len() > 1 => Some(r),
        Some(r) => {
            if let (Some(declared), Some(&only)) = (root_id, r.first()) {
                if declared != only {
                    return Err(TreeError::Schema("root_id disagrees with roots".into()));
                }
            }
            None
        }
        None if root_id.is_none() && parentless.len() > 1 => Some(parentless.clone()),
        None => None,
    };

    let root = match forest_roots {
        Some(mut forest) => {
            // order component trees by their leftmost EDU
            let leftmost = |id: NodeId| -> usize {
                let mut cur = id;
                loop {
                    if let Some(e) = edus.iter().find(|e| e.id == cur) {
                        return e.start;
                    }
                    match internals.iter().find(|n| n.id == cur) {
                        Some(n) => cur = n.left,
                        None => return usize::MAX,
                    }
                }
            };
            forest.sort_by_key(|&id| leftmost(id));
            let mut next_id = ids.iter().next_back().map_or(0, |m| m + 1);
            let mut acc = *forest.last().ok_or_else(|| TreeError::Schema("empty roots".into()))?;
            for &left in forest.iter().rev().skip(1) {
                internals.push(InternalNode {
                    id: next_id,
                    relation: RelationLabel::TextualOrganization,
                    left,
                    right: acc,
                });
                acc = next_id;
                next_id += 1;
            }
            acc
        }
        None => match root_id {
            Some(r) => r,
            None => match parentless.as_slice() {
                [only] => *only,
                _ => return Err(TreeError::Schema("no root".into())),
            },
        },
    };

    let mut tree = RstTree::new(doc_id, text, edus, internals, root)?;
    tree.nuclearity = nuclearity;
    tree.truncated = truncated;
    Ok(tree)
}
