//! Positional encodings of graph nodes.
//!
//! Two encoders are provided. `ppr_encode` computes each node's
//! personalized-PageRank row, the steady state `(1-beta)(I - beta*P)^{-1}`
//! of a random walk with restart, either by geometric-series accumulation
//! or by a direct linear solve. `poincare_embed` fits low-dimensional
//! hyperbolic coordinates in the Poincare ball by Riemannian SGD on a
//! negative-sampling link objective.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{lu_factor, lu_solve};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metric::{poincare_distance_grad, MetricKind, MetricSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PprMode {
    /// Accumulate `(1-beta) * sum_k beta^k P^k`, stopping once the added
    /// term's max-norm drops below `tol`.
    Series { max_terms: usize, tol: f64 },
    /// Factor `I - beta*P` once and solve for every basis column.
    LinearSolve,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PprConfig {
    /// Restart complement: `1 - beta` is the restart probability.
    pub beta: f64,
    pub mode: PprMode,
    /// Keep only the k largest off-diagonal entries per row (union-symmetrized).
    pub topk: Option<usize>,
}

impl Default for PprConfig {
    fn default() -> Self {
        // The series stops on the added term's max-norm; the geometric
        // tail it discards is larger by roughly beta/(1-beta) * n, so the
        // default tolerance sits three orders below the 1e-10 row-sum
        // contract.
        Self {
            beta: 0.85,
            mode: PprMode::Series {
                max_terms: 1000,
                tol: 1e-13,
            },
            topk: None,
        }
    }
}

impl PprConfig {
    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if let PprMode::Series { max_terms, tol } = self.mode {
            if max_terms < 1 {
                return Err(Error::InvalidParameter("max_terms must be >= 1".into()));
            }
            if tol <= 0.0 {
                return Err(Error::InvalidParameter("series tol must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Row-stochastic random-walk step `v <- v P` with `P = D^{-1} A`;
/// isolated nodes restart to themselves (`P` row = basis vector).
fn walk_step(g: &Graph, v: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for l in 0..g.n() {
        let deg = g.degree(l);
        if deg == 0 {
            out[l] += v[l];
        } else {
            let c = v[l] / deg as f64;
            for &j in g.nbrs(l) {
                out[j] += c;
            }
        }
    }
}

/// Personalized-PageRank positional matrix: row i is the PPR vector of
/// node i. Rows are non-negative and sum to 1.
pub fn ppr_encode(g: &Graph, cfg: &PprConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = g.n();
    let beta = cfg.beta;
    let mut u = match cfg.mode {
        PprMode::Series { max_terms, tol } => {
            // term_0 = (1-beta) I, term_{k+1} = beta * term_k * P
            let mut u = Array2::<f64>::eye(n) * (1.0 - beta);
            let mut term = u.clone();
            let mut next = vec![0.0; n];
            for _ in 0..max_terms {
                let mut max_entry = 0.0f64;
                for i in 0..n {
                    let row = term.row(i).to_vec();
                    walk_step(g, &row, &mut next);
                    for j in 0..n {
                        let v = beta * next[j];
                        term[[i, j]] = v;
                        u[[i, j]] += v;
                        max_entry = max_entry.max(v.abs());
                    }
                }
                if max_entry < tol {
                    break;
                }
            }
            u
        }
        PprMode::LinearSolve => {
            // B = I - beta*P, U = (1-beta) B^{-1}; solve per basis column.
            let mut b_mat = Array2::<f64>::eye(n);
            for l in 0..n {
                let deg = g.degree(l);
                if deg == 0 {
                    b_mat[[l, l]] -= beta;
                } else {
                    let c = beta / deg as f64;
                    for &j in g.nbrs(l) {
                        b_mat[[l, j]] -= c;
                    }
                }
            }
            let piv = lu_factor(&mut b_mat)?;
            let mut u = Array2::<f64>::zeros((n, n));
            let mut col = vec![0.0; n];
            for j in 0..n {
                col.fill(0.0);
                col[j] = 1.0 - beta;
                lu_solve(&b_mat, &piv, &mut col);
                for i in 0..n {
                    u[[i, j]] = col[i];
                }
            }
            u
        }
    };
    if let Some(k) = cfg.topk {
        u = sparsify_topk(&u, k);
    }
    Ok(u)
}

/// Zeroes everything except the diagonal and the union-symmetrized top-k
/// off-diagonal entries per row (ties broken by smaller column id).
pub fn sparsify_topk(u: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = u.nrows();
    let mut keep = vec![false; n * n];
    for i in 0..n {
        let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        idx.sort_by(|&a, &b| {
            u[[i, b]]
                .partial_cmp(&u[[i, a]])
                .unwrap()
                .then(a.cmp(&b))
        });
        for &j in idx.iter().take(k) {
            keep[i * n + j] = true;
            keep[j * n + i] = true;
        }
    }
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = u[[i, i]];
        for j in 0..n {
            if keep[i * n + j] {
                out[[i, j]] = u[[i, j]];
            }
        }
    }
    out
}

/// Graph whose edges are the off-diagonal sparsity pattern of a
/// (union-symmetrized) top-k positional matrix.
pub fn topk_union_graph(u: &Array2<f64>, k: usize) -> Result<Graph> {
    let sparse = sparsify_topk(u, k);
    let n = sparse.nrows();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && sparse[[i, j]] != 0.0 {
                adj[i].push(j); // pattern is symmetric, so (j, i) arrives too
            }
        }
    }
    Ok(Graph::from_adjacency(adj))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypEmbedConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub negatives_per_edge: usize,
    pub seed: u64,
}

impl Default for HypEmbedConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            epochs: 300,
            lr: 0.05,
            negatives_per_edge: 5,
            seed: 0,
        }
    }
}

impl HypEmbedConfig {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidParameter("embedding dim must be >= 2".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidParameter("lr must be > 0".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// One anchor-edge training example with its fixed negative samples.
struct LinkExample {
    anchor: usize,
    target: usize,
    negatives: Vec<usize>,
}

/// Softmax-style link loss of one example given current coordinates:
/// `d(anchor, target) + log sum_k exp(-d(anchor, k))` over the target and
/// its negatives. Returns the loss and the softmax weights of candidates.
fn link_loss(points: &Array2<f64>, ex: &LinkExample, m: &MetricSpace) -> (f64, Vec<f64>) {
    let anchor = points.row(ex.anchor);
    let anchor = anchor.as_slice().unwrap();
    let mut dists = Vec::with_capacity(1 + ex.negatives.len());
    let d_target = m.distance(anchor, points.row(ex.target).as_slice().unwrap()).unwrap();
    dists.push(d_target);
    for &k in &ex.negatives {
        dists.push(m.distance(anchor, points.row(k).as_slice().unwrap()).unwrap());
    }
    let min_d = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = dists.iter().map(|&d| (-(d - min_d)).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = d_target - min_d + sum.ln();
    let weights = exps.iter().map(|&e| e / sum).collect();
    (loss, weights)
}

/// Fits Poincare-ball coordinates by sequential Riemannian SGD. Negative
/// samples are drawn once up front so the objective is a fixed function;
/// after each epoch the objective is re-evaluated and, on any increase,
/// the epoch is rolled back and the learning rate halved.
pub fn poincare_embed(g: &Graph, m: &MetricSpace, cfg: &HypEmbedConfig) -> Result<Array2<f64>> {
    poincare_embed_with_loss(g, m, cfg).map(|(points, _)| points)
}

/// As [`poincare_embed`], also returning the evaluated objective after the
/// initialization and after every epoch; the sequence never increases.
pub fn poincare_embed_with_loss(
    g: &Graph,
    m: &MetricSpace,
    cfg: &HypEmbedConfig,
) -> Result<(Array2<f64>, Vec<f64>)> {
    cfg.validate()?;
    if m.kind != MetricKind::PoincareBall {
        return Err(Error::InvalidParameter(
            "poincare_embed requires a PoincareBall metric".into(),
        ));
    }
    if m.dim != cfg.dim {
        return Err(Error::DimMismatch(format!(
            "metric dim {} != embedding dim {}",
            m.dim, cfg.dim
        )));
    }
    if g.edge_count() == 0 {
        return Err(Error::NoSupervision);
    }
    let n = g.n();
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // init: uniform in the radius-0.001 ball
    let mut points = Array2::<f64>::zeros((n, dim));
    for i in 0..n {
        let mut dir: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-30);
        let r = 0.001 * rng.gen::<f64>().powf(1.0 / dim as f64);
        for (d, x) in dir.iter_mut().enumerate() {
            *x *= r / norm;
            points[[i, d]] = *x;
        }
    }

    // fixed training examples: every directed edge is an anchor pair.
    // Candidates are all k with (i, k) not an edge; that includes k = i,
    // whose e^{-d(u_i,u_i)} = 1 term keeps the denominator meaningful even
    // on graphs with no other non-edges (e.g. a 2-node path).
    let mut examples = Vec::with_capacity(g.edge_count());
    for (i, j, _) in g.directed_edges() {
        let candidates: Vec<usize> = (0..n).filter(|&k| !g.has_edge(i, k)).collect();
        let mut negatives = Vec::with_capacity(cfg.negatives_per_edge);
        if !candidates.is_empty() {
            for _ in 0..cfg.negatives_per_edge {
                negatives.push(candidates[rng.gen_range(0..candidates.len())]);
            }
        }
        examples.push(LinkExample {
            anchor: i,
            target: j,
            negatives,
        });
    }

    let total_loss = |pts: &Array2<f64>| -> f64 {
        examples.iter().map(|ex| link_loss(pts, ex, m).0).sum()
    };

    let mut lr = cfg.lr;
    let mut prev_loss = total_loss(&points);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(prev_loss);
    for _ in 0..cfg.epochs {
        let snapshot = points.clone();
        for ex in &examples {
            let (_, weights) = link_loss(&points, ex, m);
            // dL/dd_target = 1 - w_target; dL/dd_k = -w_k for negatives
            let mut coeffs = Vec::with_capacity(weights.len());
            coeffs.push(1.0 - weights[0]);
            for w in &weights[1..] {
                coeffs.push(-w);
            }
            let anchor_pt = points.row(ex.anchor).to_vec();
            let mut anchor_grad = vec![0.0; dim];
            let mut updates: Vec<(usize, Vec<f64>)> = Vec::with_capacity(weights.len());
            for (c, &other) in std::iter::once(&ex.target)
                .chain(ex.negatives.iter())
                .enumerate()
            {
                let other_pt = points.row(other).to_vec();
                let (ga, go) = poincare_distance_grad(&anchor_pt, &other_pt);
                for d in 0..dim {
                    anchor_grad[d] += coeffs[c] * ga[d];
                }
                updates.push((other, go.iter().map(|x| coeffs[c] * x).collect()));
            }
            updates.push((ex.anchor, anchor_grad));
            for (node, grad) in updates {
                let pt = points.row(node).to_vec();
                let rgrad = m.riemannian_scale(&pt, &grad);
                let mut row = points.row_mut(node);
                for d in 0..dim {
                    row[d] -= lr * rgrad[d];
                }
                m.project(row.as_slice_mut().unwrap());
            }
        }
        let loss = total_loss(&points);
        if loss > prev_loss {
            points = snapshot;
            lr *= 0.5;
        } else {
            prev_loss = loss;
        }
        history.push(prev_loss);
    }
    Ok((points, history))
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn path2() -> Graph {
        Graph::from_edge_list(&[(0, 1)]).unwrap()
    }

    fn cycle3() -> Graph {
        Graph::from_edge_list(&[(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn two_node_path_closed_form() {
        let cfg = PprConfig {
            beta: 0.5,
            ..PprConfig::default()
        };
        let u = ppr_encode(&path2(), &cfg).unwrap();
        assert_relative_eq!(u[[0, 0]], 2.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(u[[0, 1]], 1.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(u[[1, 0]], 1.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(u[[1, 1]], 2.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn three_cycle_closed_form() {
        // P has eigenvalues {1, -1/2, -1/2}: diagonal 0.6, off-diagonal 0.2
        let cfg = PprConfig {
            beta: 0.5,
            ..PprConfig::default()
        };
        let u = ppr_encode(&cycle3(), &cfg).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.6 } else { 0.2 };
                assert_relative_eq!(u[[i, j]], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pure_restart_limit() {
        let cfg = PprConfig {
            beta: 1e-9,
            ..PprConfig::default()
        };
        let u = ppr_encode(&cycle3(), &cfg).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((u[[i, j]] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn beta_out_of_range_rejected() {
        let cfg = PprConfig {
            beta: 1.0,
            ..PprConfig::default()
        };
        assert!(ppr_encode(&path2(), &cfg).is_err());
    }

    #[test]
    fn isolated_node_row_is_basis_vector() {
        let g = Graph::from_edge_list(&[(0, 1), (2, 2)]).unwrap();
        let u = ppr_encode(&g, &PprConfig::default()).unwrap();
        assert_relative_eq!(u[[2, 2]], 1.0, epsilon = 1e-10);
        assert_relative_eq!(u[[2, 0]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn topk_pattern_is_symmetric_union() {
        let g = Graph::from_edge_list(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        let cfg = PprConfig {
            beta: 0.85,
            topk: Some(1),
            ..PprConfig::default()
        };
        let u = ppr_encode(&g, &cfg).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(u[[i, j]] != 0.0, u[[j, i]] != 0.0, "pattern at ({i},{j})");
            }
        }
        let topk = topk_union_graph(&u, 1).unwrap();
        assert!(topk.edge_count() >= 4);
        topk.check_invariants().unwrap();
    }

    fn random_graph(n: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = vec![];
        for i in 0..n {
            pairs.push((i, (i + 1) % n)); // ring keeps it connected
        }
        for _ in 0..n {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                pairs.push((a, b));
            }
        }
        Graph::from_edge_list(&pairs).unwrap()
    }

    #[test]
    fn series_and_solve_agree() {
        for seed in 0..6u64 {
            let g = random_graph(6 + 4 * seed as usize, seed);
            let series = ppr_encode(
                &g,
                &PprConfig {
                    beta: 0.85,
                    mode: PprMode::Series {
                        max_terms: 5000,
                        tol: 1e-13,
                    },
                    topk: None,
                },
            )
            .unwrap();
            let solve = ppr_encode(
                &g,
                &PprConfig {
                    beta: 0.85,
                    mode: PprMode::LinearSolve,
                    topk: None,
                },
            )
            .unwrap();
            let diff = (&series - &solve)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-8, "max diff {diff}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn rows_are_stochastic(seed in 0u64..500, beta in 0.05f64..0.95) {
            let g = random_graph(8, seed);
            let cfg = PprConfig { beta, ..PprConfig::default() };
            let u = ppr_encode(&g, &cfg).unwrap();
            for i in 0..g.n() {
                let mut sum = 0.0;
                for j in 0..g.n() {
                    prop_assert!(u[[i, j]] >= 0.0);
                    sum += u[[i, j]];
                }
                prop_assert!((sum - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn embed_init_stays_in_tiny_ball() {
        let g = path2();
        let m = MetricSpace::poincare_ball(2);
        let cfg = HypEmbedConfig {
            epochs: 1,
            lr: 1e-12, // effectively frozen: observe the initialization
            ..HypEmbedConfig::default()
        };
        let pts = poincare_embed(&g, &m, &cfg).unwrap();
        for i in 0..2 {
            let norm = pts.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= 0.0011, "norm {norm}");
        }
    }

    #[test]
    fn star_graph_separates_edges_from_non_edges() {
        let g = Graph::from_edge_list(&[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]).unwrap();
        let m = MetricSpace::poincare_ball(2);
        let cfg = HypEmbedConfig {
            dim: 2,
            epochs: 200,
            lr: 0.05,
            negatives_per_edge: 3,
            seed: 7,
        };
        let pts = poincare_embed(&g, &m, &cfg).unwrap();
        let dist = |i: usize, j: usize| {
            m.distance(
                pts.row(i).as_slice().unwrap(),
                pts.row(j).as_slice().unwrap(),
            )
            .unwrap()
        };
        let mut edge_mean = 0.0;
        for leaf in 1..6 {
            edge_mean += dist(0, leaf);
        }
        edge_mean /= 5.0;
        let mut non_edge_mean = 0.0;
        let mut count = 0;
        for a in 1..6 {
            for b in (a + 1)..6 {
                non_edge_mean += dist(a, b);
                count += 1;
            }
        }
        non_edge_mean /= count as f64;
        assert!(
            edge_mean < non_edge_mean,
            "edge mean {edge_mean} vs non-edge mean {non_edge_mean}"
        );
    }

    #[test]
    fn two_node_path_contracts() {
        let g = path2();
        let m = MetricSpace::poincare_ball(2);
        let cfg = HypEmbedConfig {
            dim: 2,
            epochs: 50,
            lr: 0.05,
            negatives_per_edge: 3,
            seed: 3,
        };
        // Replicate the init (same seed, frozen lr) to measure the
        // starting distance.
        let before = {
            let tiny = HypEmbedConfig { epochs: 1, lr: 1e-12, ..cfg };
            let pts = poincare_embed(&g, &m, &tiny).unwrap();
            m.distance(
                pts.row(0).as_slice().unwrap(),
                pts.row(1).as_slice().unwrap(),
            )
            .unwrap()
        };
        let pts = poincare_embed(&g, &m, &cfg).unwrap();
        let after = m
            .distance(
                pts.row(0).as_slice().unwrap(),
                pts.row(1).as_slice().unwrap(),
            )
            .unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn embedding_loss_never_increases() {
        let g = Graph::from_edge_list(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        let m = MetricSpace::poincare_ball(2);
        let cfg = HypEmbedConfig {
            dim: 2,
            epochs: 120,
            lr: 0.4, // deliberately aggressive so the halving path fires
            negatives_per_edge: 3,
            seed: 2,
        };
        let (_, history) = poincare_embed_with_loss(&g, &m, &cfg).unwrap();
        assert_eq!(history.len(), 121);
        for w in history.windows(2) {
            assert!(w[1] <= w[0], "loss increased: {} -> {}", w[0], w[1]);
        }
        assert!(*history.last().unwrap() < history[0]);
    }

    #[test]
    fn zero_edge_graph_has_no_supervision() {
        let g = Graph::from_edge_list(&[(0, 0), (1, 1)]).unwrap();
        let m = MetricSpace::poincare_ball(2);
        assert!(matches!(
            poincare_embed(&g, &m, &HypEmbedConfig::default()),
            Err(Error::NoSupervision)
        ));
    }
}
