//! Directed social graph with labeled nodes, reversible edits, and a
//! baseline snapshot for per-trial rollback.
//!
//! Adjacency lists are kept sorted by `(NodeId, relation)` so every traversal
//! is deterministic regardless of insertion order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque node handle, stable across snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ground-truth / predicted account class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Bot,
}

/// Edge relation tag. Tag 0 is the follow relation the attack operates on.
pub type RelationTag = u8;

pub const FOLLOW: RelationTag = 0;

/// Per-node record: class label, optional detector prediction, normalized
/// account age and an opaque content vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub label: Label,
    pub predicted: Option<Label>,
    pub age_norm: f64,
    pub content: Vec<f64>,
}

impl NodeRecord {
    pub fn new(label: Label, age_norm: f64, content: Vec<f64>) -> Self {
        Self {
            label,
            predicted: None,
            age_norm,
            content,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Add,
    Delete,
}

/// A single directed edge edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeEdit {
    pub op: EditOp,
    pub src: NodeId,
    pub dst: NodeId,
    pub relation: RelationTag,
}

impl EdgeEdit {
    pub fn add(src: NodeId, dst: NodeId) -> Self {
        Self {
            op: EditOp::Add,
            src,
            dst,
            relation: FOLLOW,
        }
    }

    pub fn delete(src: NodeId, dst: NodeId, relation: RelationTag) -> Self {
        Self {
            op: EditOp::Delete,
            src,
            dst,
            relation,
        }
    }

    pub fn is_incident_to(&self, target: NodeId) -> bool {
        self.src == target || self.dst == target
    }

    /// The inverse edit (add <-> delete of the same edge).
    pub fn inverse(&self) -> Self {
        Self {
            op: match self.op {
                EditOp::Add => EditOp::Delete,
                EditOp::Delete => EditOp::Add,
            },
            ..*self
        }
    }
}

/// A finite set of edits, all incident to one designated target node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSet {
    pub target: NodeId,
    pub edits: Vec<EdgeEdit>,
}

impl EditSet {
    pub fn new(target: NodeId) -> Self {
        Self {
            target,
            edits: Vec::new(),
        }
    }

    pub fn add_count(&self) -> usize {
        self.edits.iter().filter(|e| e.op == EditOp::Add).count()
    }

    pub fn delete_count(&self) -> usize {
        self.edits.iter().filter(|e| e.op == EditOp::Delete).count()
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct GraphState {
    nodes: BTreeMap<NodeId, NodeRecord>,
    out_adj: BTreeMap<NodeId, Vec<(NodeId, RelationTag)>>,
    in_adj: BTreeMap<NodeId, Vec<(NodeId, RelationTag)>>,
    edge_count: usize,
}

impl GraphState {
    fn has_node(&self, v: NodeId) -> bool {
        self.nodes.contains_key(&v)
    }

    fn has_edge(&self, src: NodeId, dst: NodeId, relation: RelationTag) -> bool {
        self.out_adj
            .get(&src)
            .map(|list| list.binary_search(&(dst, relation)).is_ok())
            .unwrap_or(false)
    }

    /// Inserts the edge, returns false if it already existed.
    fn insert_edge(&mut self, src: NodeId, dst: NodeId, relation: RelationTag) -> bool {
        let out = self.out_adj.entry(src).or_default();
        match out.binary_search(&(dst, relation)) {
            Ok(_) => false,
            Err(pos) => {
                out.insert(pos, (dst, relation));
                let inc = self.in_adj.entry(dst).or_default();
                let pos = inc
                    .binary_search(&(src, relation))
                    .expect_err("in/out adjacency out of sync");
                inc.insert(pos, (src, relation));
                self.edge_count += 1;
                true
            }
        }
    }

    /// Removes the edge, returns false if it was absent.
    fn remove_edge(&mut self, src: NodeId, dst: NodeId, relation: RelationTag) -> bool {
        let out = match self.out_adj.get_mut(&src) {
            Some(list) => list,
            None => return false,
        };
        match out.binary_search(&(dst, relation)) {
            Ok(pos) => {
                out.remove(pos);
                let drop_out = out.is_empty();
                let inc = self
                    .in_adj
                    .get_mut(&dst)
                    .expect("in/out adjacency out of sync");
                let pos = inc
                    .binary_search(&(src, relation))
                    .expect("in/out adjacency out of sync");
                inc.remove(pos);
                // Drop empty lists so states reached by different edit paths
                // compare equal.
                if inc.is_empty() {
                    self.in_adj.remove(&dst);
                }
                if drop_out {
                    self.out_adj.remove(&src);
                }
                self.edge_count -= 1;
                true
            }
            Err(_) => false,
        }
    }
}

/// Constructs a [`DirectedSocialGraph`]; `build` freezes the baseline snapshot.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    state: GraphState,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId, record: NodeRecord) -> Result<()> {
        if self.state.nodes.contains_key(&id) {
            return Err(Error::InvalidParams(format!("duplicate node id {id}")));
        }
        if !(0.0..=1.0).contains(&record.age_norm) {
            return Err(Error::InvalidParams(format!(
                "age_norm {} for node {id} outside [0,1]",
                record.age_norm
            )));
        }
        self.state.nodes.insert(id, record);
        Ok(())
    }

    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, relation: RelationTag) -> Result<()> {
        if src == dst {
            return Err(Error::ConstraintViolation(format!("self-loop at {src}")));
        }
        for v in [src, dst] {
            if !self.state.has_node(v) {
                return Err(Error::NodeNotFound(v));
            }
        }
        self.state.insert_edge(src, dst, relation);
        Ok(())
    }

    pub fn build(self) -> Result<DirectedSocialGraph> {
        let dims: Vec<usize> = self.state.nodes.values().map(|r| r.content.len()).collect();
        if let Some(&first) = dims.first() {
            if dims.iter().any(|&d| d != first) {
                return Err(Error::InvalidParams(
                    "content vectors have mixed dimensions".into(),
                ));
            }
        }
        Ok(DirectedSocialGraph {
            baseline: self.state.clone(),
            state: self.state,
            version: 0,
        })
    }
}

/// Directed follow graph with an immutable baseline snapshot.
///
/// Single-writer, multi-reader: mutation requires `&mut self`, reads share
/// `&self`. The baseline is fixed at build time and restored by
/// [`reset_to_baseline`](Self::reset_to_baseline).
#[derive(Debug, Clone)]
pub struct DirectedSocialGraph {
    state: GraphState,
    baseline: GraphState,
    version: u64,
}

impl DirectedSocialGraph {
    pub fn node(&self, v: NodeId) -> Option<&NodeRecord> {
        self.state.nodes.get(&v)
    }

    fn require_node(&self, v: NodeId) -> Result<&NodeRecord> {
        self.node(v).ok_or(Error::NodeNotFound(v))
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.state.nodes.keys().copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &NodeRecord)> + '_ {
        self.state.nodes.iter().map(|(id, r)| (*id, r))
    }

    pub fn node_count(&self) -> usize {
        self.state.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.state.edge_count
    }

    /// Monotone counter bumped on every mutation; lets caches detect staleness.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn label(&self, v: NodeId) -> Option<Label> {
        self.node(v).map(|r| r.label)
    }

    pub fn content_dim(&self) -> usize {
        self.state
            .nodes
            .values()
            .next()
            .map(|r| r.content.len())
            .unwrap_or(0)
    }

    pub fn has_edge(&self, src: NodeId, dst: NodeId, relation: RelationTag) -> bool {
        self.state.has_edge(src, dst, relation)
    }

    /// True if any directed edge src->dst exists under any relation tag.
    pub fn has_any_edge(&self, src: NodeId, dst: NodeId) -> bool {
        self.state
            .out_adj
            .get(&src)
            .map(|list| list.iter().any(|&(d, _)| d == dst))
            .unwrap_or(false)
    }

    /// Outgoing (dst, relation) pairs, ascending.
    pub fn out_edges(&self, v: NodeId) -> &[(NodeId, RelationTag)] {
        self.state.out_adj.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Incoming (src, relation) pairs, ascending.
    pub fn in_edges(&self, v: NodeId) -> &[(NodeId, RelationTag)] {
        self.state.in_adj.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct out-neighbors under the given relation tag, ascending.
    pub fn out_neighbors(&self, v: NodeId, relation: RelationTag) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .out_edges(v)
            .iter()
            .filter(|&&(_, r)| r == relation)
            .map(|&(d, _)| d)
            .collect();
        out.dedup();
        out
    }

    /// Distinct in-neighbors under the given relation tag, ascending.
    pub fn in_neighbors(&self, v: NodeId, relation: RelationTag) -> Vec<NodeId> {
        let mut inc: Vec<NodeId> = self
            .in_edges(v)
            .iter()
            .filter(|&&(_, r)| r == relation)
            .map(|&(s, _)| s)
            .collect();
        inc.dedup();
        inc
    }

    /// In/out edge counts over all relation tags.
    pub fn degree_stats(&self, v: NodeId) -> Result<(usize, usize)> {
        self.require_node(v)?;
        Ok((self.in_edges(v).len(), self.out_edges(v).len()))
    }

    pub fn total_degree(&self, v: NodeId) -> Result<usize> {
        let (din, dout) = self.degree_stats(v)?;
        Ok(din + dout)
    }

    /// Union of in- and out-neighbors within `k` hops (undirected
    /// reachability), excluding `v` itself, ascending NodeId.
    pub fn ego_neighborhood(&self, v: NodeId, k: usize) -> Result<Vec<NodeId>> {
        self.require_node(v)?;
        if k == 0 {
            return Err(Error::InvalidParams("hop count must be >= 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut frontier = vec![v];
        for _ in 0..k {
            let mut next = Vec::new();
            for &u in &frontier {
                for &(w, _) in self.out_edges(u).iter().chain(self.in_edges(u)) {
                    if w != v && seen.insert(w) {
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(seen.into_iter().collect())
    }

    /// Applies the edit set in order. Adds of existing edges and deletes of
    /// absent edges are no-ops; the returned count covers only edits that
    /// changed the graph.
    pub fn apply_edits(&mut self, edits: &EditSet) -> Result<usize> {
        for e in &edits.edits {
            if !e.is_incident_to(edits.target) {
                return Err(Error::ConstraintViolation(format!(
                    "edit {:?} not incident to target {}",
                    e, edits.target
                )));
            }
            if e.src == e.dst {
                return Err(Error::ConstraintViolation(format!(
                    "self-loop at {}",
                    e.src
                )));
            }
            for v in [e.src, e.dst] {
                if !self.state.has_node(v) {
                    return Err(Error::NodeNotFound(v));
                }
            }
        }
        let mut applied = 0;
        for e in &edits.edits {
            let changed = match e.op {
                EditOp::Add => self.state.insert_edge(e.src, e.dst, e.relation),
                EditOp::Delete => self.state.remove_edge(e.src, e.dst, e.relation),
            };
            if changed {
                applied += 1;
            }
        }
        self.version += 1;
        Ok(applied)
    }

    /// Restores adjacency and node records to the build-time snapshot.
    /// Nodes injected after the build are removed.
    pub fn reset_to_baseline(&mut self) {
        self.state = self.baseline.clone();
        self.version += 1;
    }

    /// Inserts a fresh isolated node with an id above every existing one.
    /// The node is not part of the baseline, so a reset removes it.
    pub fn inject_node(&mut self, record: NodeRecord) -> NodeId {
        let id = NodeId(
            self.state
                .nodes
                .keys()
                .next_back()
                .map(|n| n.0 + 1)
                .unwrap_or(0),
        );
        self.state.nodes.insert(id, record);
        self.version += 1;
        id
    }

    pub fn set_content(&mut self, v: NodeId, content: Vec<f64>) -> Result<()> {
        let rec = self.state.nodes.get_mut(&v).ok_or(Error::NodeNotFound(v))?;
        rec.content = content;
        self.version += 1;
        Ok(())
    }

    pub fn set_age_norm(&mut self, v: NodeId, age_norm: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&age_norm) {
            return Err(Error::InvalidParams(format!(
                "age_norm {age_norm} outside [0,1]"
            )));
        }
        let rec = self.state.nodes.get_mut(&v).ok_or(Error::NodeNotFound(v))?;
        rec.age_norm = age_norm;
        self.version += 1;
        Ok(())
    }

    pub fn set_predicted(&mut self, v: NodeId, predicted: Option<Label>) -> Result<()> {
        let rec = self.state.nodes.get_mut(&v).ok_or(Error::NodeNotFound(v))?;
        rec.predicted = predicted;
        self.version += 1;
        Ok(())
    }

    /// Bit-exact comparison with the baseline snapshot.
    pub fn matches_baseline(&self) -> bool {
        self.state == self.baseline
    }

    /// All labeled node ids of one class, ascending.
    pub fn nodes_with_label(&self, label: Label) -> Vec<NodeId> {
        self.nodes()
            .filter(|(_, r)| r.label == label)
            .map(|(id, _)| id)
            .collect()
    }
}
