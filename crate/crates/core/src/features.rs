//! Spatio-temporal neighbor feature vectors and importance-weighted
//! neighborhood measures.
//!
//! Each neighbor `u` of a node `v` is summarized by one fixed-layout vector
//!
//! ```text
//! [ class(u), deg_in(u), deg_out(u), role_v(u), content(u)..., age_norm(u), age_diff_norm(u;v) ]
//! ```
//!
//! and the 1-hop neighborhood becomes an empirical probability measure over
//! those vectors, weighted by a degree/age importance score.

use crate::error::{Error, Result};
use crate::graph::{DirectedSocialGraph, Label, NodeId};

/// Mutual follow.
pub const ROLE_MUTUAL: f64 = 0.0;
/// u follows v only.
pub const ROLE_FOLLOWER: f64 = 1.0;
/// v follows u only.
pub const ROLE_FOLLOWEE: f64 = 2.0;

/// Knobs for the neighbor importance score
/// `(1 + alpha_deg * ln(1 + deg)) * (1 + alpha_time * age_norm)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeasureParams {
    pub alpha_deg: f64,
    pub alpha_time: f64,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self {
            alpha_deg: 0.8,
            alpha_time: 0.2,
        }
    }
}

/// One neighbor's feature vector in the fixed layout above.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborAtom {
    pub neighbor: NodeId,
    pub feat: Vec<f64>,
}

impl NeighborAtom {
    /// Total degree read back from the static block.
    pub fn total_degree(&self) -> f64 {
        self.feat[1] + self.feat[2]
    }

    /// Normalized account age read back from the temporal block.
    pub fn age_norm(&self) -> f64 {
        let d = self.feat.len();
        self.feat[d - 2]
    }
}

/// Feature vector length for a given content dimension:
/// 3 static + 1 behavioral + d_c content + 2 temporal.
pub fn feature_dim(content_dim: usize) -> usize {
    3 + 1 + content_dim + 2
}

/// Importance-weighted empirical distribution over a node's neighbor atoms.
///
/// Invariants: atoms nonempty, every weight strictly positive, weights sum
/// to 1 within 1e-12, atom order ascending NodeId.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMeasure {
    pub atoms: Vec<NeighborAtom>,
    pub weights: Vec<f64>,
}

impl NeighborMeasure {
    pub fn new(atoms: Vec<NeighborAtom>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMarginal(
                "measure needs at least one atom".into(),
            ));
        }
        if atoms.len() != weights.len() {
            return Err(Error::ShapeError(format!(
                "{} atoms vs {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::InvalidMarginal(
                "weights must be strictly positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMarginal(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self { atoms, weights })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Directed edge role of `u` with respect to `v`: 1 follower, 2 followee,
/// 0 mutual.
pub fn edge_role(g: &DirectedSocialGraph, v: NodeId, u: NodeId) -> Result<u8> {
    let u_to_v = g.has_any_edge(u, v);
    let v_to_u = g.has_any_edge(v, u);
    match (u_to_v, v_to_u) {
        (true, true) => Ok(0),
        (true, false) => Ok(1),
        (false, true) => Ok(2),
        (false, false) => Err(Error::NotNeighbor(u, v)),
    }
}

/// Assembles the spatio-temporal feature vector of neighbor `u` relative
/// to `v`.
pub fn neighbor_features(g: &DirectedSocialGraph, v: NodeId, u: NodeId) -> Result<NeighborAtom> {
    let role = edge_role(g, v, u)? as f64;
    let rec_u = g.node(u).ok_or(Error::NodeNotFound(u))?;
    let rec_v = g.node(v).ok_or(Error::NodeNotFound(v))?;
    let (deg_in, deg_out) = g.degree_stats(u)?;
    let class = match rec_u.label {
        Label::Human => 0.0,
        Label::Bot => 1.0,
    };
    let mut feat = Vec::with_capacity(feature_dim(rec_u.content.len()));
    feat.push(class);
    feat.push(deg_in as f64);
    feat.push(deg_out as f64);
    feat.push(role);
    feat.extend_from_slice(&rec_u.content);
    feat.push(rec_u.age_norm);
    feat.push(rec_u.age_norm - rec_v.age_norm);
    debug_assert!(feat.iter().all(|x| x.is_finite()));
    Ok(NeighborAtom { neighbor: u, feat })
}

/// Unnormalized importance score of neighbor `u`, always positive.
pub fn importance_score(
    g: &DirectedSocialGraph,
    v: NodeId,
    u: NodeId,
    p: &MeasureParams,
) -> Result<f64> {
    edge_role(g, v, u)?;
    let deg_raw = g.total_degree(u)? as f64;
    let age = g.node(u).ok_or(Error::NodeNotFound(u))?.age_norm;
    let g_deg = 1.0 + p.alpha_deg * (1.0 + deg_raw).ln();
    let g_time = 1.0 + p.alpha_time * age;
    Ok(g_deg * g_time)
}

/// Builds the neighborhood probability measure of `v` over its 1-hop
/// neighbors, atoms in ascending NodeId order.
pub fn neighborhood_measure(
    g: &DirectedSocialGraph,
    v: NodeId,
    p: &MeasureParams,
) -> Result<NeighborMeasure> {
    let neighbors = g.ego_neighborhood(v, 1)?;
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighborhood(v));
    }
    let mut atoms = Vec::with_capacity(neighbors.len());
    let mut scores = Vec::with_capacity(neighbors.len());
    for u in neighbors {
        atoms.push(neighbor_features(g, v, u)?);
        scores.push(importance_score(g, v, u, p)?);
    }
    let total: f64 = scores.iter().sum();
    let weights = scores.into_iter().map(|s| s / total).collect();
    NeighborMeasure::new(atoms, weights)
}
