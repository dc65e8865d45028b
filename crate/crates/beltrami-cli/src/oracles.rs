//! Independent reference computations backing the verification suites.
//!
//! These deliberately avoid the library's own code paths: the matrix
//! exponential is a dense Taylor series under scaling-and-squaring, and
//! the nearest-neighbor construction sorts full distance rows and
//! symmetrizes through an explicit pair set.

use std::collections::BTreeSet;

use beltrami::graph::Graph;
use beltrami::metric::MetricSpace;
use ndarray::{Array2, ArrayView2};

/// `exp(M)` by scaling-and-squaring with a Taylor expansion of the scaled
/// matrix; accurate to near machine precision for desk-scale norms.
pub fn expm(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let norm = m
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let squarings = norm.log2().ceil().max(0.0) as u32 + 4;
    let scaled = m / 2f64.powi(squarings as i32);
    let mut result = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for k in 1..60 {
        term = term.dot(&scaled) / k as f64;
        result += &term;
        if term.iter().map(|v| v.abs()).fold(0.0f64, f64::max) < 1e-20 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// Dense generator `A - I` of a frozen linear flow; rows of isolated nodes
/// are zero (their state is a fixed point).
pub fn dense_generator(g: &Graph, weights: &[f64]) -> Array2<f64> {
    let n = g.n();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        if g.degree(i) > 0 {
            m[[i, i]] = -1.0;
        }
    }
    for (i, j, slot) in g.directed_edges() {
        m[[i, j]] += weights[slot];
    }
    m
}

/// Brute-force union-symmetrized kNN graph: every pairwise distance, full
/// sorts, explicit pair set.
pub fn brute_force_knn(points: ArrayView2<f64>, k: usize, metric: &MetricSpace) -> Graph {
    let n = points.nrows();
    assert!(k < n);
    let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).to_vec()).collect();
    let mut chosen = BTreeSet::new();
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (metric.distance(&rows[i], &rows[j]).expect("valid points"), j))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in dists.iter().take(k) {
            chosen.insert((i.min(j), i.max(j)));
        }
    }
    let pairs: Vec<(usize, usize)> = chosen.into_iter().collect();
    let mut adj = vec![Vec::new(); n];
    for (a, b) in pairs {
        adj[a].push(b);
        adj[b].push(a);
    }
    // assemble through the strict loader so this path stays independent of
    // the library's symmetrizing constructor
    let mut directed = Vec::new();
    for (a, row) in adj.iter().enumerate() {
        for &b in row {
            directed.push((a, b));
        }
    }
    Graph::from_edge_list_strict(&directed).expect("construction is symmetric")
}
