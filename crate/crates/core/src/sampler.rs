//! Cloak template sampling: structural categorization over the 4x4
//! outgoing/incoming neighbor-composition grid, category- and cloak-level
//! importance weights, and reuse-capped draws.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::CloakCandidate;
use crate::graph::{DirectedSocialGraph, Label, NodeId};

/// Composition of one side (outgoing or incoming) of a node's neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborClass {
    Humans,
    Bots,
    Both,
    Nobody,
}

impl NeighborClass {
    fn from_counts(humans: usize, bots: usize) -> Self {
        match (humans > 0, bots > 0) {
            (true, true) => Self::Both,
            (true, false) => Self::Humans,
            (false, true) => Self::Bots,
            (false, false) => Self::Nobody,
        }
    }
}

/// One of the sixteen outgoing x incoming structural categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct StructuralCategory {
    pub outgoing: NeighborClass,
    pub incoming: NeighborClass,
}

/// Classifies a node by who it follows and who follows it.
pub fn structural_category(g: &DirectedSocialGraph, t: NodeId) -> Result<StructuralCategory> {
    let counts = edge_label_counts(g, t)?;
    Ok(StructuralCategory {
        outgoing: NeighborClass::from_counts(counts.out_h, counts.out_b),
        incoming: NeighborClass::from_counts(counts.in_h, counts.in_b),
    })
}

struct LabelCounts {
    in_h: usize,
    in_b: usize,
    out_h: usize,
    out_b: usize,
}

fn edge_label_counts(g: &DirectedSocialGraph, t: NodeId) -> Result<LabelCounts> {
    g.node(t).ok_or(Error::NodeNotFound(t))?;
    let mut c = LabelCounts {
        in_h: 0,
        in_b: 0,
        out_h: 0,
        out_b: 0,
    };
    for &(dst, _) in g.out_edges(t) {
        match g.label(dst) {
            Some(Label::Human) => c.out_h += 1,
            Some(Label::Bot) => c.out_b += 1,
            None => {}
        }
    }
    for &(src, _) in g.in_edges(t) {
        match g.label(src) {
            Some(Label::Human) => c.in_h += 1,
            Some(Label::Bot) => c.in_b += 1,
            None => {}
        }
    }
    Ok(c)
}

/// Structural profile of one cloak candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloakProfile {
    pub node: NodeId,
    pub category: StructuralCategory,
    pub in_h: usize,
    pub in_b: usize,
    pub out_h: usize,
    pub out_b: usize,
    /// Edge-cost proxy: out_h + out_b + in_h + in_b.
    pub e: usize,
    /// 1 iff the cloak has at least one human follower.
    pub eta: bool,
    pub rank: usize,
}

pub fn build_profile(g: &DirectedSocialGraph, candidate: &CloakCandidate) -> Result<CloakProfile> {
    let counts = edge_label_counts(g, candidate.node)?;
    Ok(CloakProfile {
        node: candidate.node,
        category: StructuralCategory {
            outgoing: NeighborClass::from_counts(counts.out_h, counts.out_b),
            incoming: NeighborClass::from_counts(counts.in_h, counts.in_b),
        },
        in_h: counts.in_h,
        in_b: counts.in_b,
        out_h: counts.out_h,
        out_b: counts.out_b,
        e: counts.out_h + counts.out_b + counts.in_h + counts.in_b,
        eta: counts.in_h > 0,
        rank: candidate.rank,
    })
}

/// Category distribution and per-category cloak distributions.
#[derive(Debug, Clone, Serialize)]
pub struct SamplingWeights {
    pub p_category: BTreeMap<StructuralCategory, f64>,
    pub p_cloak: BTreeMap<StructuralCategory, Vec<(NodeId, f64)>>,
}

/// Builds the two-level sampling distribution:
/// category weight `(e_min / max(e_bar_c, 1e-6))^2 / (1 + r_bar_c / M)`,
/// cloak weight `1/(1+e) * 1/(1+rank/r_max) * (0.5 if human follower)`,
/// each normalized over its support.
pub fn importance_weights(profiles: &[CloakProfile]) -> Result<SamplingWeights> {
    if profiles.is_empty() {
        return Err(Error::InvalidParams("no profiles to weight".into()));
    }
    let total = profiles.len() as f64;
    let r_max = profiles.iter().map(|p| p.rank).max().unwrap_or(0).max(1) as f64;

    let mut buckets: BTreeMap<StructuralCategory, Vec<&CloakProfile>> = BTreeMap::new();
    for p in profiles {
        buckets.entry(p.category).or_default().push(p);
    }

    let mut e_bar: BTreeMap<StructuralCategory, f64> = BTreeMap::new();
    let mut r_bar: BTreeMap<StructuralCategory, f64> = BTreeMap::new();
    for (&cat, members) in &buckets {
        let n = members.len() as f64;
        e_bar.insert(cat, members.iter().map(|p| p.e as f64).sum::<f64>() / n);
        r_bar.insert(cat, members.iter().map(|p| p.rank as f64).sum::<f64>() / n);
    }
    let e_min = e_bar.values().cloned().fold(f64::INFINITY, f64::min);

    let mut p_category = BTreeMap::new();
    for (&cat, &eb) in &e_bar {
        let w_edges = (e_min / eb.max(1e-6)).powi(2);
        let w_rank = 1.0 / (1.0 + r_bar[&cat] / total);
        p_category.insert(cat, w_edges * w_rank);
    }
    let z: f64 = p_category.values().sum();
    for w in p_category.values_mut() {
        *w /= z;
    }

    let mut p_cloak = BTreeMap::new();
    for (&cat, members) in &buckets {
        let mut weights: Vec<(NodeId, f64)> = members
            .iter()
            .map(|p| {
                let w_edges = 1.0 / (1.0 + p.e as f64);
                let w_rank = 1.0 / (1.0 + p.rank as f64 / r_max);
                let w_human = if p.eta { 0.5 } else { 1.0 };
                (p.node, w_edges * w_rank * w_human)
            })
            .collect();
        weights.sort_by_key(|&(node, _)| node);
        let z: f64 = weights.iter().map(|&(_, w)| w).sum();
        for (_, w) in weights.iter_mut() {
            *w /= z;
        }
        p_cloak.insert(cat, weights);
    }
    Ok(SamplingWeights {
        p_category,
        p_cloak,
    })
}

/// Draws a cloak, restricted to under-cap templates when any exist;
/// otherwise falls back to the unrestricted distributions.
pub fn sample_cloak<R: Rng>(
    weights: &SamplingWeights,
    use_counts: &BTreeMap<NodeId, u32>,
    reuse_cap: u32,
    rng: &mut R,
) -> NodeId {
    let under_cap = |node: NodeId| use_counts.get(&node).copied().unwrap_or(0) < reuse_cap;

    // Joint mass of under-cap cloaks per category.
    let mut restricted: Vec<(StructuralCategory, f64)> = Vec::new();
    for (&cat, cloaks) in &weights.p_cloak {
        let alpha: f64 = cloaks
            .iter()
            .filter(|&&(node, _)| under_cap(node))
            .map(|&(_, w)| w)
            .sum();
        if alpha > 0.0 {
            restricted.push((cat, weights.p_category[&cat] * alpha));
        }
    }

    if !restricted.is_empty() {
        let cat = weighted_choice(rng, restricted.iter().map(|&(c, w)| (c, w)));
        let members: Vec<(NodeId, f64)> = weights.p_cloak[&cat]
            .iter()
            .filter(|&&(node, _)| under_cap(node))
            .copied()
            .collect();
        return weighted_choice(rng, members.into_iter());
    }

    // Everything is at the cap: unrestricted fallback.
    let cat = weighted_choice(rng, weights.p_category.iter().map(|(&c, &w)| (c, w)));
    weighted_choice(rng, weights.p_cloak[&cat].iter().copied())
}

fn weighted_choice<R: Rng, T: Copy>(rng: &mut R, items: impl Iterator<Item = (T, f64)>) -> T {
    let collected: Vec<(T, f64)> = items.collect();
    let total: f64 = collected.iter().map(|&(_, w)| w).sum();
    debug_assert!(total > 0.0);
    let mut draw = rng.gen_range(0.0..total);
    for &(item, w) in &collected {
        if draw < w {
            return item;
        }
        draw -= w;
    }
    collected.last().expect("nonempty weighted choice").0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, NodeRecord, FOLLOW};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rec(label: Label) -> NodeRecord {
        NodeRecord::new(label, 0.5, vec![])
    }

    #[test]
    fn isolated_node_is_nobody_nobody() {
        let mut gb = GraphBuilder::new();
        gb.add_node(NodeId(0), rec(Label::Bot)).unwrap();
        let g = gb.build().unwrap();
        let cat = structural_category(&g, NodeId(0)).unwrap();
        assert_eq!(
            cat,
            StructuralCategory {
                outgoing: NeighborClass::Nobody,
                incoming: NeighborClass::Nobody
            }
        );
    }

    #[test]
    fn follows_human_followed_by_bot() {
        let mut gb = GraphBuilder::new();
        gb.add_node(NodeId(0), rec(Label::Bot)).unwrap();
        gb.add_node(NodeId(1), rec(Label::Human)).unwrap();
        gb.add_node(NodeId(2), rec(Label::Bot)).unwrap();
        gb.add_edge(NodeId(0), NodeId(1), FOLLOW).unwrap();
        gb.add_edge(NodeId(2), NodeId(0), FOLLOW).unwrap();
        let g = gb.build().unwrap();
        let cat = structural_category(&g, NodeId(0)).unwrap();
        assert_eq!(cat.outgoing, NeighborClass::Humans);
        assert_eq!(cat.incoming, NeighborClass::Bots);
    }

    #[test]
    fn follows_both_no_followers() {
        let mut gb = GraphBuilder::new();
        gb.add_node(NodeId(0), rec(Label::Bot)).unwrap();
        gb.add_node(NodeId(1), rec(Label::Human)).unwrap();
        gb.add_node(NodeId(2), rec(Label::Bot)).unwrap();
        gb.add_edge(NodeId(0), NodeId(1), FOLLOW).unwrap();
        gb.add_edge(NodeId(0), NodeId(2), FOLLOW).unwrap();
        let g = gb.build().unwrap();
        let cat = structural_category(&g, NodeId(0)).unwrap();
        assert_eq!(cat.outgoing, NeighborClass::Both);
        assert_eq!(cat.incoming, NeighborClass::Nobody);
    }

    #[test]
    fn category_invariant_under_insertion_order() {
        let build = |edges: &[(u64, u64)]| {
            let mut gb = GraphBuilder::new();
            for id in 0..4 {
                gb.add_node(
                    NodeId(id),
                    rec(if id == 0 { Label::Bot } else { Label::Human }),
                )
                .unwrap();
            }
            for &(s, d) in edges {
                gb.add_edge(NodeId(s), NodeId(d), FOLLOW).unwrap();
            }
            gb.build().unwrap()
        };
        let a = build(&[(0, 1), (0, 2), (3, 0)]);
        let b = build(&[(3, 0), (0, 2), (0, 1)]);
        assert_eq!(
            structural_category(&a, NodeId(0)).unwrap(),
            structural_category(&b, NodeId(0)).unwrap()
        );
    }

    #[test]
    fn profile_edge_proxy_equals_total_degree_on_labeled_graphs() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut gb = GraphBuilder::new();
        let n = 20;
        for id in 0..n {
            let label = if rng.gen_bool(0.5) {
                Label::Bot
            } else {
                Label::Human
            };
            gb.add_node(NodeId(id), rec(label)).unwrap();
        }
        for _ in 0..60 {
            let s = rng.gen_range(0..n);
            let d = rng.gen_range(0..n);
            if s != d {
                let _ = gb.add_edge(NodeId(s), NodeId(d), FOLLOW);
            }
        }
        let g = gb.build().unwrap();
        for id in 0..n {
            let candidate = CloakCandidate {
                node: NodeId(id),
                margin: 0.0,
                rank: 0,
            };
            let profile = build_profile(&g, &candidate).unwrap();
            assert_eq!(profile.e, g.total_degree(NodeId(id)).unwrap());
        }
    }

    fn profile(
        node: u64,
        cat: (NeighborClass, NeighborClass),
        e: usize,
        eta: bool,
        rank: usize,
    ) -> CloakProfile {
        CloakProfile {
            node: NodeId(node),
            category: StructuralCategory {
                outgoing: cat.0,
                incoming: cat.1,
            },
            in_h: if eta { 1 } else { 0 },
            in_b: 0,
            out_h: 0,
            out_b: 0,
            e,
            eta,
            rank,
        }
    }

    #[test]
    fn single_profile_gets_all_mass() {
        let p = profile(
            7,
            (NeighborClass::Humans, NeighborClass::Nobody),
            2,
            false,
            0,
        );
        let w = importance_weights(&[p]).unwrap();
        assert_eq!(w.p_category.len(), 1);
        assert_relative_eq!(*w.p_category.values().next().unwrap(), 1.0);
        assert_relative_eq!(w.p_cloak[&p.category][0].1, 1.0);
    }

    #[test]
    fn cloak_weights_match_hand_evaluation() {
        // e = (0, 1), rank = (0, 1), eta = (0, 0):
        // unnormalized (1*1*1, 0.5*0.5*1) -> (0.8, 0.2).
        let cat = (NeighborClass::Nobody, NeighborClass::Bots);
        let profiles = [profile(0, cat, 0, false, 0), profile(1, cat, 1, false, 1)];
        let w = importance_weights(&profiles).unwrap();
        let cloaks = &w.p_cloak[&profiles[0].category];
        assert_relative_eq!(cloaks[0].1, 0.8, epsilon = 1e-12);
        assert_relative_eq!(cloaks[1].1, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn category_edge_factor_is_squared_ratio() {
        // Two categories with mean e (1, 2) and equal mean rank: edge
        // factors (1, 0.25), ratio 4:1 before the rank factor.
        let cat_a = (NeighborClass::Nobody, NeighborClass::Bots);
        let cat_b = (NeighborClass::Humans, NeighborClass::Nobody);
        let profiles = [
            profile(0, cat_a, 1, false, 0),
            profile(1, cat_b, 2, false, 0),
        ];
        let w = importance_weights(&profiles).unwrap();
        let pa = w.p_category[&profiles[0].category];
        let pb = w.p_category[&profiles[1].category];
        assert_relative_eq!(pa / pb, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn probabilities_form_distributions() {
        let cat_a = (NeighborClass::Nobody, NeighborClass::Bots);
        let cat_b = (NeighborClass::Both, NeighborClass::Both);
        let profiles = [
            profile(0, cat_a, 0, false, 0),
            profile(1, cat_a, 3, true, 1),
            profile(2, cat_b, 5, true, 2),
            profile(3, cat_b, 1, false, 3),
        ];
        let w = importance_weights(&profiles).unwrap();
        assert_relative_eq!(w.p_category.values().sum::<f64>(), 1.0, epsilon = 1e-10);
        for cloaks in w.p_cloak.values() {
            let total: f64 = cloaks.iter().map(|&(_, p)| p).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-10);
            assert!(cloaks.iter().all(|&(_, p)| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn reuse_cap_forces_remaining_cloak() {
        let cat = (NeighborClass::Nobody, NeighborClass::Bots);
        let profiles = [profile(0, cat, 0, false, 0), profile(1, cat, 1, false, 1)];
        let w = importance_weights(&profiles).unwrap();
        let mut counts = BTreeMap::new();
        counts.insert(NodeId(0), 1);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_cloak(&w, &counts, 1, &mut rng), NodeId(1));
        }
    }

    #[test]
    fn all_at_cap_falls_back_to_unrestricted() {
        let cat = (NeighborClass::Nobody, NeighborClass::Bots);
        let profiles = [profile(0, cat, 0, false, 0), profile(1, cat, 1, false, 1)];
        let w = importance_weights(&profiles).unwrap();
        let mut counts = BTreeMap::new();
        counts.insert(NodeId(0), 5);
        counts.insert(NodeId(1), 5);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            seen.insert(sample_cloak(&w, &counts, 3, &mut rng));
        }
        assert_eq!(seen.len(), 2, "fallback samples the full distribution");
    }

    #[test]
    fn no_cloak_exceeds_cap_while_anyone_is_under() {
        let cat_a = (NeighborClass::Nobody, NeighborClass::Bots);
        let cat_b = (NeighborClass::Humans, NeighborClass::Both);
        let profiles = [
            profile(0, cat_a, 0, false, 0),
            profile(1, cat_a, 2, true, 1),
            profile(2, cat_b, 1, false, 2),
        ];
        let w = importance_weights(&profiles).unwrap();
        let cap = 3u32;
        let mut counts: BTreeMap<NodeId, u32> = BTreeMap::new();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        // Adversarial sequence: every draw is counted as a use.
        for _ in 0..(3 * cap as usize) {
            let some_under_cap = profiles
                .iter()
                .any(|p| counts.get(&p.node).copied().unwrap_or(0) < cap);
            let pick = sample_cloak(&w, &counts, cap, &mut rng);
            if some_under_cap {
                assert!(
                    counts.get(&pick).copied().unwrap_or(0) < cap,
                    "sampled an at-cap cloak while under-cap cloaks existed"
                );
            }
            *counts.entry(pick).or_insert(0) += 1;
        }
    }

    #[test]
    fn empirical_frequencies_match_weights() {
        // Uniform weights, fresh counts: 10k draws within 3 sigma per cell.
        let cat = (NeighborClass::Nobody, NeighborClass::Nobody);
        let profiles: Vec<CloakProfile> = (0..4).map(|i| profile(i, cat, 1, false, 0)).collect();
        let w = importance_weights(&profiles).unwrap();
        let counts_map = BTreeMap::new();
        let mut rng = ChaCha20Rng::seed_from_u64(12345);
        let draws = 10_000usize;
        let mut tally: BTreeMap<NodeId, usize> = BTreeMap::new();
        for _ in 0..draws {
            *tally
                .entry(sample_cloak(&w, &counts_map, u32::MAX, &mut rng))
                .or_insert(0) += 1;
        }
        let p = 0.25;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for i in 0..4 {
            let observed = *tally.get(&NodeId(i)).unwrap_or(&0) as f64;
            let expected = draws as f64 * p;
            assert!(
                (observed - expected).abs() <= 3.0 * sigma,
                "cell {i}: observed {observed}, expected {expected} +- {}",
                3.0 * sigma
            );
        }
    }
}
