//! OT-distance service: pairwise neighborhood distances under the learned
//! geometry, a mutation-aware cache, and boundary-candidate mining.

use std::collections::HashMap;

use serde::Serialize;

use crate::cost_model::OtGeometry;
use crate::detector::PredictionSet;
use crate::error::{Error, Result};
use crate::features::{neighborhood_measure, MeasureParams, NeighborMeasure};
use crate::graph::{DirectedSocialGraph, Label, NodeId};
use crate::ot::{sinkhorn, transport_cost, SinkhornConfig};
use crate::training::{mine_nearest, MarginRecord};

/// Cache of pairwise OT distances keyed on the ordered (query, anchor)
/// pair, plus per-node metric embeddings so repeated solves under a fixed
/// geometry embed each atom once. Entries are dropped whenever the graph
/// version moves. A cache is only valid for one geometry; use a fresh one
/// per trained geometry.
#[derive(Debug, Default)]
pub struct DistanceCache {
    graph_version: Option<u64>,
    map: HashMap<(NodeId, NodeId), f64>,
    embeddings: HashMap<NodeId, Vec<ndarray::Array1<f64>>>,
    pub hits: u64,
    pub misses: u64,
}

impl DistanceCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn sync(&mut self, version: u64) {
        if self.graph_version != Some(version) {
            self.map.clear();
            self.embeddings.clear();
            self.graph_version = Some(version);
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// OT distance between the neighborhood measures of two nodes: transport
/// cost of the entropic plan under the learned ground cost.
pub fn ot_distance(
    geo: &OtGeometry,
    g: &DirectedSocialGraph,
    v: NodeId,
    xi: NodeId,
    measure: &MeasureParams,
    cfg: &SinkhornConfig,
    cache: &mut DistanceCache,
) -> Result<f64> {
    cache.sync(g.version());
    if let Some(&d) = cache.map.get(&(v, xi)) {
        cache.hits += 1;
        return Ok(d);
    }
    cache.misses += 1;
    let mu_v = neighborhood_measure(g, v, measure)?;
    let mu_xi = neighborhood_measure(g, xi, measure)?;
    for (node, mu) in [(v, &mu_v), (xi, &mu_xi)] {
        if let std::collections::hash_map::Entry::Vacant(slot) = cache.embeddings.entry(node) {
            slot.insert(geo.metric_embeddings(mu)?);
        }
    }
    let d = {
        let qa = &cache.embeddings[&v];
        let qb = &cache.embeddings[&xi];
        let cost = crate::cost_model::cost_matrix_from_embeddings(qa, qb, &mu_v, &mu_xi)?;
        let plan = sinkhorn(&cost, cfg)?;
        transport_cost(&plan, &cost)?
    };
    cache.map.insert((v, xi), d);
    Ok(d)
}

/// Distance between two prebuilt measures (no cache involvement).
pub fn measure_distance(
    geo: &OtGeometry,
    mu_a: &NeighborMeasure,
    mu_b: &NeighborMeasure,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    let cost = geo.cost_matrix_for(mu_a, mu_b)?;
    let plan = sinkhorn(&cost, cfg)?;
    transport_cost(&plan, &cost)
}

/// OT margin of a bot against nearest human / nearest other bot pools.
#[allow(clippy::too_many_arguments)]
pub fn margin(
    geo: &OtGeometry,
    g: &DirectedSocialGraph,
    v: NodeId,
    humans: &[NodeId],
    bots: &[NodeId],
    mislabeled: bool,
    measure: &MeasureParams,
    cfg: &SinkhornConfig,
    cache: &mut DistanceCache,
) -> Result<MarginRecord> {
    mine_nearest(geo, g, v, humans, bots, mislabeled, measure, cfg, cache)
}

/// A mined cloak template candidate: a misclassified boundary bot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloakCandidate {
    pub node: NodeId,
    pub margin: f64,
    pub rank: usize,
}

/// Mines misclassified boundary bots: true bots with total degree within
/// `degree_cap`, margin at most `tau_bdry`, and a human prediction from the
/// detector. Sorted by ascending margin (ties by NodeId), ranked, truncated
/// to `max_candidates`. An empty list is a valid outcome.
#[allow(clippy::too_many_arguments)]
pub fn boundary_candidates(
    geo: &OtGeometry,
    g: &DirectedSocialGraph,
    predictions: &PredictionSet,
    tau_bdry: f64,
    degree_cap: usize,
    max_candidates: usize,
    measure: &MeasureParams,
    cfg: &SinkhornConfig,
    cache: &mut DistanceCache,
) -> Result<Vec<CloakCandidate>> {
    let humans = eligible_pool(g, Label::Human);
    let bots = eligible_pool(g, Label::Bot);
    let mut out = Vec::new();
    for &b in &bots {
        if g.total_degree(b)? > degree_cap {
            continue;
        }
        if predictions.label(b) != Some(Label::Human) {
            continue;
        }
        // A lone connected bot has no "nearest other bot"; it cannot carry
        // a margin, so it cannot be a candidate.
        let record = match mine_nearest(geo, g, b, &humans, &bots, true, measure, cfg, cache) {
            Ok(r) => r,
            Err(Error::EmptyPool(_)) => continue,
            Err(e) => return Err(e),
        };
        if record.margin <= tau_bdry {
            out.push((b, record.margin));
        }
    }
    out.sort_by(|x, y| {
        x.1.partial_cmp(&y.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.0.cmp(&y.0))
    });
    out.truncate(max_candidates);
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(rank, (node, margin))| CloakCandidate { node, margin, rank })
        .collect())
}

/// All nodes of a class that carry a nonempty 1-hop neighborhood, ascending.
pub fn eligible_pool(g: &DirectedSocialGraph, label: Label) -> Vec<NodeId> {
    g.nodes_with_label(label)
        .into_iter()
        .filter(|&v| g.total_degree(v).map(|d| d > 0).unwrap_or(false))
        .collect()
}
