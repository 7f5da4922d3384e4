//! Property tests for the graph, measure, and solver invariants.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use otcloak_core::features::{neighborhood_measure, MeasureParams};
use otcloak_core::graph::{EdgeEdit, EditSet, GraphBuilder, Label, NodeRecord, FOLLOW};
use otcloak_core::ot::{sinkhorn, CostMatrix, SinkhornConfig};
use otcloak_core::{DirectedSocialGraph, NodeId};

fn arb_graph() -> impl Strategy<Value = DirectedSocialGraph> {
    // 3..12 nodes, random label/age/degree structure.
    (
        3usize..12,
        proptest::collection::vec((0u64..12, 0u64..12), 0..40),
        any::<u64>(),
    )
        .prop_map(|(n, raw_edges, label_bits)| {
            let mut gb = GraphBuilder::new();
            for i in 0..n {
                let label = if (label_bits >> (i % 64)) & 1 == 0 {
                    Label::Human
                } else {
                    Label::Bot
                };
                let age = (i as f64 * 0.083) % 1.0;
                gb.add_node(
                    NodeId(i as u64),
                    NodeRecord::new(label, age, vec![i as f64 * 0.1]),
                )
                .unwrap();
            }
            for (s, d) in raw_edges {
                let (s, d) = (s % n as u64, d % n as u64);
                if s != d {
                    let _ = gb.add_edge(NodeId(s), NodeId(d), FOLLOW);
                }
            }
            gb.build().unwrap()
        })
}

proptest! {
    #[test]
    fn handshake_identity(g in arb_graph()) {
        let total_out: usize = g.node_ids().map(|v| g.out_edges(v).len()).sum();
        let total_in: usize = g.node_ids().map(|v| g.in_edges(v).len()).sum();
        prop_assert_eq!(total_out, g.edge_count());
        prop_assert_eq!(total_in, g.edge_count());
    }

    #[test]
    fn ego_neighborhood_is_union_of_adjacency(g in arb_graph()) {
        for v in g.node_ids() {
            let ego: BTreeSet<NodeId> = g.ego_neighborhood(v, 1).unwrap().into_iter().collect();
            // Oracle: direct union of in- and out-neighbor sets.
            let mut union: BTreeSet<NodeId> = g.out_edges(v).iter().map(|&(d, _)| d).collect();
            union.extend(g.in_edges(v).iter().map(|&(s, _)| s));
            union.remove(&v);
            prop_assert_eq!(ego, union);
        }
    }

    #[test]
    fn edits_then_inverse_restore_adjacency(
        g in arb_graph(),
        choices in proptest::collection::vec((any::<bool>(), 0u64..12), 1..8),
    ) {
        let mut g = g;
        let target = g.node_ids().next().unwrap();
        let nodes: Vec<NodeId> = g.node_ids().collect();
        let mut edits = EditSet::new(target);
        for (add, pick) in choices {
            let other = nodes[(pick as usize) % nodes.len()];
            if other == target {
                continue;
            }
            edits.edits.push(if add {
                EdgeEdit::add(target, other)
            } else {
                EdgeEdit::delete(other, target, FOLLOW)
            });
        }
        // Snapshot adjacency, apply, then apply the reversed inverse.
        let before: Vec<Vec<(NodeId, u8)>> =
            g.node_ids().map(|v| g.out_edges(v).to_vec()).collect();
        // The inverse only undoes edits that actually changed the graph, so
        // apply twice symmetrically: record which edits changed state.
        let mut applied_edits = Vec::new();
        for e in &edits.edits {
            let single = EditSet { target, edits: vec![*e] };
            if g.apply_edits(&single).unwrap() == 1 {
                applied_edits.push(*e);
            }
        }
        let inverse = EditSet {
            target,
            edits: applied_edits.iter().rev().map(|e| e.inverse()).collect(),
        };
        g.apply_edits(&inverse).unwrap();
        let after: Vec<Vec<(NodeId, u8)>> =
            g.node_ids().map(|v| g.out_edges(v).to_vec()).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn measure_weights_are_a_distribution(g in arb_graph()) {
        let params = MeasureParams::default();
        for v in g.node_ids() {
            match neighborhood_measure(&g, v, &params) {
                Ok(mu) => {
                    let total: f64 = mu.weights.iter().sum();
                    prop_assert!((total - 1.0).abs() <= 1e-12);
                    prop_assert!(mu.weights.iter().all(|&w| w > 0.0));
                    // Atom order ascending NodeId.
                    let ids: Vec<NodeId> = mu.atoms.iter().map(|a| a.neighbor).collect();
                    let mut sorted = ids.clone();
                    sorted.sort_unstable();
                    prop_assert_eq!(ids, sorted);
                }
                Err(_) => {
                    prop_assert_eq!(g.total_degree(v).unwrap(), 0);
                }
            }
        }
    }

    #[test]
    fn importance_scale_invariance(
        scores in proptest::collection::vec(0.01f64..100.0, 1..10),
        scale in 0.01f64..1000.0,
    ) {
        let normalize = |xs: &[f64]| -> Vec<f64> {
            let t: f64 = xs.iter().sum();
            xs.iter().map(|x| x / t).collect()
        };
        let base = normalize(&scores);
        let scaled_scores: Vec<f64> = scores.iter().map(|x| x * scale).collect();
        let scaled = normalize(&scaled_scores);
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sinkhorn_meets_marginals_on_random_problems(
        m in 1usize..8,
        n in 1usize..8,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((m, n), |_| rng.gen_range(0.0..1.0));
        let mut a = Array1::from_shape_fn(m, |_| rng.gen_range(0.1..1.0));
        a /= a.sum();
        let mut b = Array1::from_shape_fn(n, |_| rng.gen_range(0.1..1.0));
        b /= b.sum();
        let c = CostMatrix::new(values, a.clone(), b.clone()).unwrap();
        let cfg = SinkhornConfig {
            epsilon: 0.3,
            max_iterations: 1000,
            marginal_tolerance: 1e-8,
        };
        let plan = sinkhorn(&c, &cfg).unwrap();
        prop_assert!(plan.converged);
        prop_assert!(plan.plan.iter().all(|&p| p >= 0.0));
        let row_err: f64 = (&plan.plan.sum_axis(ndarray::Axis(1)) - &a)
            .mapv(f64::abs)
            .sum();
        let col_err: f64 = (&plan.plan.sum_axis(ndarray::Axis(0)) - &b)
            .mapv(f64::abs)
            .sum();
        prop_assert!(row_err <= 1e-8 && col_err <= 1e-8);
    }

    #[test]
    fn edge_role_antisymmetry(g in arb_graph()) {
        use otcloak_core::features::edge_role;
        for v in g.node_ids() {
            for u in g.ego_neighborhood(v, 1).unwrap() {
                let role_vu = edge_role(&g, v, u).unwrap();
                let role_uv = edge_role(&g, u, v).unwrap();
                match role_vu {
                    0 => prop_assert_eq!(role_uv, 0),
                    1 => prop_assert_eq!(role_uv, 2),
                    2 => prop_assert_eq!(role_uv, 1),
                    _ => prop_assert!(false),
                }
            }
        }
    }
}
