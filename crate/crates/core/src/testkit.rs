//! Test-support oracles, deliberately independent of the solver code paths
//! they are used to check.

use ndarray::{Array1, Array2};
use rand::Rng;

/// Exact optimal transport value for a small problem by brute force over
/// the vertices of the transport polytope.
///
/// Every vertex of `U(a, b)` is the unique allocation supported on a
/// spanning tree of the complete bipartite graph K_{m,n}; the linear
/// objective attains its minimum at a vertex. This enumerates all
/// `m + n - 1`-cell subsets, keeps those forming spanning trees with
/// nonnegative allocations, and takes the cheapest. Exponential, so only
/// for m, n <= 5 or so.
pub fn exact_ot_bruteforce(cost: &Array2<f64>, a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = cost.dim();
    assert_eq!(a.len(), m);
    assert_eq!(b.len(), n);
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let tree_size = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = vec![0usize; tree_size];
    enumerate_combinations(cells.len(), tree_size, &mut chosen, 0, 0, &mut |subset| {
        if let Some(value) = tree_allocation_cost(cost, a, b, subset, &cells) {
            if value < best {
                best = value;
            }
        }
    });
    best
}

/// Solves the allocation forced by a candidate spanning tree via leaf
/// stripping; returns its cost if the subset is a spanning tree with a
/// nonnegative allocation.
fn tree_allocation_cost(
    cost: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    subset: &[usize],
    cells: &[(usize, usize)],
) -> Option<f64> {
    let m = a.len();
    let n = b.len();
    // Vertices 0..m are rows, m..m+n are columns.
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    for (edge_idx, &cell) in subset.iter().enumerate() {
        let (i, j) = cells[cell];
        incident[i].push(edge_idx);
        incident[m + j].push(edge_idx);
    }
    // A spanning tree touches every vertex; with |E| = V - 1 that implies
    // connectivity, and leaf stripping will consume every edge.
    if incident.iter().any(|list| list.is_empty()) {
        return None;
    }
    let mut remaining: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let mut degree: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut edge_alive = vec![true; subset.len()];
    let mut allocation = vec![0.0_f64; subset.len()];
    let mut stack: Vec<usize> = (0..m + n).filter(|&v| degree[v] == 1).collect();
    let mut processed = 0;
    while let Some(v) = stack.pop() {
        if degree[v] != 1 {
            continue;
        }
        let &edge_idx = incident[v]
            .iter()
            .find(|&&e| edge_alive[e])
            .expect("degree-1 vertex with no live edge");
        let (i, j) = cells[subset[edge_idx]];
        let other = if v == i { m + j } else { i };
        allocation[edge_idx] = remaining[v];
        if allocation[edge_idx] < -1e-12 {
            return None;
        }
        remaining[other] -= remaining[v];
        remaining[v] = 0.0;
        edge_alive[edge_idx] = false;
        degree[v] -= 1;
        degree[other] -= 1;
        processed += 1;
        if degree[other] == 1 {
            stack.push(other);
        }
    }
    if processed != subset.len() {
        // A cycle survived: not a tree.
        return None;
    }
    let mut total = 0.0;
    for (edge_idx, &cell) in subset.iter().enumerate() {
        let (i, j) = cells[cell];
        if allocation[edge_idx] < -1e-12 {
            return None;
        }
        total += allocation[edge_idx].max(0.0) * cost[(i, j)];
    }
    Some(total)
}

fn enumerate_combinations(
    total: usize,
    size: usize,
    chosen: &mut Vec<usize>,
    depth: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == size {
        visit(chosen);
        return;
    }
    for item in start..total {
        if total - item < size - depth {
            break;
        }
        chosen[depth] = item;
        enumerate_combinations(total, size, chosen, depth + 1, item + 1, visit);
    }
}

/// A random simplex vector with entries bounded away from zero.
pub fn random_simplex<R: Rng>(rng: &mut R, len: usize, floor: f64) -> Array1<f64> {
    let mut v = Array1::from_shape_fn(len, |_| rng.gen_range(floor..1.0));
    let total = v.sum();
    v.mapv_inplace(|x| x / total);
    v
}
