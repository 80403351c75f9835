//! Multi-relational graph built from a discourse tree.
//!
//! Every EDU and every relation node of the tree becomes a graph node. For an
//! internal node `v` labelled `r` with children `a` and `b` the graph carries
//! forward edges `(a, r, v)`, `(b, r, v)` and inverse edges `(v, r⁻¹, a)`,
//! `(v, r⁻¹, b)`, where `r⁻¹ = r + 18`. No self-loops are stored; the model's
//! self weight covers them.
//!
//! Node ids are dense and depend only on tree shape: leaves take `0..L` in
//! reading order, internals follow in post-order. Relabelling the input tree
//! therefore yields an identical graph.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::relation::{RelationLabel, NUM_RELATIONS};
use crate::rst::{NodeRef, RstTree};

/// Forward plus inverse relation ids.
pub const NUM_EDGE_RELATIONS: usize = 2 * NUM_RELATIONS;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("invalid tree: {0}")]
    InvalidTree(alloc::string::String),
    #[error("node {0} is not in the graph")]
    UnknownNode(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    /// Index into the tree's EDU list.
    Leaf { edu: usize },
    Internal { relation: RelationLabel },
}

impl NodeKind {
    /// Type index for the type-embedding table: leaf = 1, non-leaf = 0.
    pub fn type_index(self) -> usize {
        match self {
            NodeKind::Leaf { .. } => 1,
            NodeKind::Internal { .. } => 0,
        }
    }

    pub fn is_leaf(self) -> bool {
        matches!(self, NodeKind::Leaf { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub relation: usize,
    pub dst: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphDump", into = "GraphDump")]
pub struct LogicGraph {
    nodes: Vec<NodeKind>,
    edges: Vec<Edge>,
    root: usize,
    num_relations: usize,
    /// children[v] in left-to-right order (empty for leaves)
    children: Vec<Vec<usize>>,
}

/// Serialized form: node list, edge triplets and root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDump {
    pub nodes: Vec<NodeKind>,
    pub edges: Vec<Edge>,
    pub root: usize,
    pub num_relations: usize,
}

impl From<LogicGraph> for GraphDump {
    fn from(g: LogicGraph) -> Self {
        GraphDump { nodes: g.nodes, edges: g.edges, root: g.root, num_relations: g.num_relations }
    }
}

impl TryFrom<GraphDump> for LogicGraph {
    type Error = GraphError;

    fn try_from(d: GraphDump) -> Result<Self, GraphError> {
        LogicGraph::from_parts(d.nodes, d.edges, d.root, d.num_relations)
    }
}

pub fn forward_relation(r: RelationLabel) -> usize {
    r.index()
}

pub fn inverse_relation(r: RelationLabel) -> usize {
    NUM_RELATIONS + r.index()
}

impl LogicGraph {
    /// Assemble a graph from raw parts, e.g. for randomised model tests.
    /// `children` is recovered from edges whose relation id is a forward id.
    pub fn from_parts(
        nodes: Vec<NodeKind>,
        edges: Vec<Edge>,
        root: usize,
        num_relations: usize,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        if root >= n {
            return Err(GraphError::UnknownNode(root));
        }
        if let Some(e) = edges.iter().find(|e| e.src >= n || e.dst >= n || e.relation >= num_relations) {
            return Err(GraphError::InvalidTree(alloc::format!("edge {e:?} out of range")));
        }
        let mut children = vec![Vec::new(); n];
        for e in &edges {
            if e.relation < NUM_RELATIONS.min(num_relations) && !nodes[e.dst].is_leaf() {
                children[e.dst].push(e.src);
            }
        }
        Ok(LogicGraph { nodes, edges, root, num_relations, children })
    }

    pub fn nodes(&self) -> &[NodeKind] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|k| k.is_leaf()).count()
    }

    /// Same graph with node ids permuted: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> LogicGraph {
        assert_eq!(perm.len(), self.nodes.len());
        let mut nodes = self.nodes.clone();
        for (i, &p) in perm.iter().enumerate() {
            nodes[p] = self.nodes[i];
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { src: perm[e.src], relation: e.relation, dst: perm[e.dst] })
            .collect();
        LogicGraph::from_parts(nodes, edges, perm[self.root], self.num_relations).expect("permutation of valid graph")
    }
}

/// Transform a validated tree into its logic graph.
pub fn build_graph(tree: &RstTree) -> Result<LogicGraph, GraphError> {
    let leaves = tree.leaf_order().map_err(|e| GraphError::InvalidTree(alloc::format!("{e}")))?;
    let l = leaves.len();
    let mut nodes: Vec<NodeKind> = (0..l).map(|edu| NodeKind::Leaf { edu }).collect();
    let mut edges = Vec::with_capacity(4 * l.saturating_sub(1));

    // iterative post-order; returns the dense id of each visited subtree
    enum Frame {
        Enter(usize),
        Exit(usize),
    }
    let mut leaf_counter = 0usize;
    let mut results: Vec<usize> = Vec::new();
    let mut stack = vec![Frame::Enter(tree.root())];
    while let Some(frame) = stack.pop() {
        match frame {
            Frame::Enter(id) => match tree.lookup(id) {
                Some(NodeRef::Leaf(_)) => {
                    results.push(leaf_counter);
                    leaf_counter += 1;
                }
                Some(NodeRef::Internal(i)) => {
                    let n = tree.internals()[i];
                    stack.push(Frame::Exit(i));
                    stack.push(Frame::Enter(n.right));
                    stack.push(Frame::Enter(n.left));
                }
                None => return Err(GraphError::InvalidTree(alloc::format!("dangling id {id}"))),
            },
            Frame::Exit(i) => {
                let relation = tree.internals()[i].relation;
                let right = results.pop().expect("right child visited");
                let left = results.pop().expect("left child visited");
                let v = nodes.len();
                nodes.push(NodeKind::Internal { relation });
                for child in [left, right] {
                    edges.push(Edge { src: child, relation: forward_relation(relation), dst: v });
                    edges.push(Edge { src: v, relation: inverse_relation(relation), dst: child });
                }
                results.push(v);
            }
        }
    }
    let root = results.pop().ok_or_else(|| GraphError::InvalidTree("empty tree".into()))?;
    LogicGraph::from_parts(nodes, edges, root, NUM_EDGE_RELATIONS)
}

/// Leaf node ids in the subtree rooted at `node` (the node itself for a leaf),
/// in ascending order.
pub fn descendants(graph: &LogicGraph, node: usize) -> Result<Vec<usize>, GraphError> {
    if node >= graph.num_nodes() {
        return Err(GraphError::UnknownNode(node));
    }
    let mut out = Vec::new();
    let mut stack = vec![node];
    while let Some(v) = stack.pop() {
        if graph.nodes[v].is_leaf() {
            out.push(v);
        } else {
            stack.extend_from_slice(&graph.children[v]);
        }
    }
    out.sort_unstable();
    Ok(out)
}
