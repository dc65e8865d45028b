//! Discrete Polyakov action and its gradient flow.
//!
//! The action `S[Z, psi] = 1/2 sum_l sum_ij A_ij psi_ij^l(Z)` generalizes
//! the Dirichlet energy of a multi-channel graph signal: each edge term is
//! `psi~_ij(p)(z_j^l - z_i^l)^2`, where `p` collects the squared distances
//! from `z_i` to every node and `psi~_ij` may only depend on the entries of
//! `p` indexed by neighbors of `i`. Under that locality assumption the
//! gradient flow of `S` is an edge-weighted diffusion whose per-edge
//! coefficient has a closed form; `grad_action` assembles it and
//! `verify_gradient_flow` integrates it, checking that the action never
//! increases and that the assembled flow agrees with the generic
//! weighted-stencil right-hand side.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffusivity::EdgeWeights;
use crate::error::{Error, Result};
use crate::flow::{rhs_with_weights, JointState};
use crate::graph::Graph;

/// Edge-coefficient family entering the action.
#[derive(Debug, Clone)]
pub enum PsiFamily {
    /// `psi~ = 1`: the classic Dirichlet energy; the flow coefficient is
    /// exactly 2.
    Classical,
    Parametric(ParametricPsi),
}

/// Concrete nontrivial family
/// `psi~_ij(p) = c_ij * (1 + sigmoid(sum_{k in N(i)} w_k p_k))`:
/// non-negative for positive `c`, local by construction.
#[derive(Debug, Clone)]
pub struct ParametricPsi {
    /// `c_ij` per directed edge slot; positive.
    pub edge_coeffs: Vec<f64>,
    /// `w_k` per node; non-negative.
    pub node_weights: Vec<f64>,
}

impl ParametricPsi {
    pub fn random(g: &Graph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            edge_coeffs: (0..g.edge_count()).map(|_| rng.gen_range(0.1..0.5)).collect(),
            node_weights: (0..g.n()).map(|_| rng.gen_range(0.02..0.08)).collect(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sq_dist_rows(z: &ArrayView2<f64>, a: usize, b: usize) -> f64 {
    z.row(a)
        .iter()
        .zip(z.row(b))
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

impl PsiFamily {
    /// Weighted sum `s_i = sum_{k in N(i)} w_k |z_i - z_k|^2` feeding the
    /// parametric sigmoid.
    fn anchor_sum(&self, g: &Graph, z: &ArrayView2<f64>, i: usize) -> f64 {
        match self {
            PsiFamily::Classical => 0.0,
            PsiFamily::Parametric(p) => g
                .nbrs(i)
                .iter()
                .map(|&k| p.node_weights[k] * sq_dist_rows(z, i, k))
                .sum(),
        }
    }

    /// `psi~_ij` evaluated at the squared-distance vector anchored at `i`.
    pub fn eval(&self, g: &Graph, z: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
        match self {
            PsiFamily::Classical => 1.0,
            PsiFamily::Parametric(p) => {
                let slot = g.edge_slot(i, j).expect("(i, j) must be a stencil edge");
                p.edge_coeffs[slot] * (1.0 + sigmoid(self.anchor_sum(g, z, i)))
            }
        }
    }

    /// `d psi~_ij / d p_k`; zero whenever `(i, k)` is not an edge.
    pub fn partial(&self, g: &Graph, z: &ArrayView2<f64>, i: usize, j: usize, k: usize) -> f64 {
        match self {
            PsiFamily::Classical => 0.0,
            PsiFamily::Parametric(p) => {
                if !g.has_edge(i, k) {
                    return 0.0;
                }
                let slot = g.edge_slot(i, j).expect("(i, j) must be a stencil edge");
                let s = sigmoid(self.anchor_sum(g, z, i));
                p.edge_coeffs[slot] * s * (1.0 - s) * p.node_weights[k]
            }
        }
    }
}

/// The action `1/2 sum over directed edges of psi~_ij |z_j - z_i|^2`
/// (the channel sum is folded into the squared norm).
pub fn action(g: &Graph, z: ArrayView2<f64>, psi: &PsiFamily) -> f64 {
    let mut s = 0.0;
    for (i, j, _) in g.directed_edges() {
        s += psi.eval(g, &z, i, j) * sq_dist_rows(&z, i, j);
    }
    0.5 * s
}

/// Closed-form flow coefficient of the gradient flow of the action:
/// `psi~_ij + psi~_ji` plus the two locality-restricted correction sums.
/// For the classical family this is exactly 2.
pub fn theorem1_diffusivity(
    g: &Graph,
    z: ArrayView2<f64>,
    psi: &PsiFamily,
    i: usize,
    j: usize,
) -> Result<f64> {
    if !g.has_edge(i, j) {
        return Err(Error::NonEdge(i, j));
    }
    Ok(diffusivity_unchecked(g, &z, psi, i, j))
}

fn diffusivity_unchecked(g: &Graph, z: &ArrayView2<f64>, psi: &PsiFamily, i: usize, j: usize) -> f64 {
    let mut a = psi.eval(g, z, i, j) + psi.eval(g, z, j, i);
    if let PsiFamily::Classical = psi {
        return a; // both correction sums vanish
    }
    for &p in g.nbrs(i) {
        a += psi.partial(g, z, i, p, j) * sq_dist_rows(z, p, i);
    }
    for &p in g.nbrs(j) {
        a += psi.partial(g, z, j, p, i) * sq_dist_rows(z, p, j);
    }
    a
}

/// Gradient of the action: row k is
/// `sum_{j in N(k)} a(z_k, z_j)(z_k - z_j)` with the closed-form
/// coefficient above.
pub fn grad_action(g: &Graph, z: ArrayView2<f64>, psi: &PsiFamily) -> Array2<f64> {
    let mut grad = Array2::zeros((z.nrows(), z.ncols()));
    for (k, j, _) in g.directed_edges() {
        let a = diffusivity_unchecked(g, &z, psi, k, j);
        for c in 0..z.ncols() {
            grad[[k, c]] += a * (z[[k, c]] - z[[j, c]]);
        }
    }
    grad
}

/// Per-slot coefficients of the gradient flow, packaged for the generic
/// weighted-stencil right-hand side. These rows are not normalized.
pub fn theorem1_weights(g: &Graph, z: ArrayView2<f64>, psi: &PsiFamily) -> EdgeWeights {
    let mut values = vec![0.0; g.edge_count()];
    for (i, j, slot) in g.directed_edges() {
        values[slot] = diffusivity_unchecked(g, &z, psi, i, j);
    }
    EdgeWeights {
        values,
        stencil: g.clone(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientFlowReport {
    /// Action value at every step, including the initial state.
    pub action_values: Vec<f64>,
    pub monotone: bool,
    pub first_violation: Option<usize>,
    /// Largest gap between `-grad_action` and the weighted-stencil flow
    /// assembled from the closed-form coefficients.
    pub max_flow_mismatch: f64,
}

/// Integrates `dZ/dt = -grad_action(Z)` with explicit Euler for `steps`
/// steps of size `tau`, recording the action along the way. At every step
/// the negated gradient is also checked against the flow assembled from
/// the closed-form per-edge coefficients.
pub fn verify_gradient_flow(
    g: &Graph,
    z0: ArrayView2<f64>,
    psi: &PsiFamily,
    steps: usize,
    tau: f64,
) -> GradientFlowReport {
    let mut z = z0.to_owned();
    let mut action_values = vec![action(g, z.view(), psi)];
    let mut first_violation = None;
    let mut max_flow_mismatch = 0.0f64;
    for step in 0..steps {
        let grad = grad_action(g, z.view(), psi);

        let weights = theorem1_weights(g, z.view(), psi);
        let state = JointState {
            positions: Array2::zeros((z.nrows(), 0)),
            features: z.clone(),
            alpha: 1.0,
        };
        let flow_deriv = rhs_with_weights(g, &state, &weights);
        for (gv, fv) in grad.iter().zip(flow_deriv.d_features.iter()) {
            max_flow_mismatch = max_flow_mismatch.max((-gv - fv).abs());
        }

        z.scaled_add(-tau, &grad);
        let s = action(g, z.view(), psi);
        let prev = *action_values.last().unwrap();
        if s > prev + 1e-12 * prev.abs().max(1.0) && first_violation.is_none() {
            first_violation = Some(step + 1);
        }
        action_values.push(s);
    }
    GradientFlowReport {
        monotone: first_violation.is_none(),
        action_values,
        first_violation,
        max_flow_mismatch,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn path2() -> Graph {
        Graph::from_edge_list(&[(0, 1)]).unwrap()
    }

    fn random_graph(n: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = vec![];
        for i in 1..n {
            pairs.push((rng.gen_range(0..i), i));
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

    fn random_embedding(n: usize, channels: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, channels), |_| rng.gen_range(-0.8..0.8))
    }

    #[test]
    fn classical_action_hand_values() {
        let z = array![[0.0], [1.0]];
        assert_relative_eq!(action(&path2(), z.view(), &PsiFamily::Classical), 1.0);

        let tri = Graph::from_edge_list(&[(0, 1), (1, 2), (0, 2)]).unwrap();
        let z = array![[0.0], [1.0], [2.0]];
        assert_relative_eq!(action(&tri, z.view(), &PsiFamily::Classical), 6.0);
    }

    #[test]
    fn action_vanishes_for_constant_embedding() {
        let g = random_graph(7, 1);
        let z = Array2::from_elem((7, 3), 0.42);
        assert_eq!(action(&g, z.view(), &PsiFamily::Classical), 0.0);
        let psi = PsiFamily::Parametric(ParametricPsi::random(&g, 5));
        assert_eq!(action(&g, z.view(), &psi), 0.0);
    }

    #[test]
    fn classical_diffusivity_is_two() {
        let g = random_graph(9, 3);
        let z = random_embedding(9, 2, 4);
        for (i, j, _) in g.directed_edges() {
            assert_eq!(theorem1_diffusivity(&g, z.view(), &PsiFamily::Classical, i, j).unwrap(), 2.0);
        }
    }

    #[test]
    fn non_edge_pair_rejected() {
        let g = Graph::from_edge_list(&[(0, 1), (1, 2)]).unwrap();
        let z = random_embedding(3, 2, 0);
        assert!(matches!(
            theorem1_diffusivity(&g, z.view(), &PsiFamily::Classical, 0, 2),
            Err(Error::NonEdge(0, 2))
        ));
    }

    #[test]
    fn constant_psi_has_no_correction_terms() {
        let g = random_graph(6, 8);
        let psi = PsiFamily::Parametric(ParametricPsi {
            edge_coeffs: (0..g.edge_count()).map(|s| 0.1 + 0.01 * s as f64).collect(),
            node_weights: vec![0.0; g.n()],
        });
        let z = random_embedding(6, 3, 9);
        for (i, j, _) in g.directed_edges() {
            let a = theorem1_diffusivity(&g, z.view(), &psi, i, j).unwrap();
            let expect = psi.eval(&g, &z.view(), i, j) + psi.eval(&g, &z.view(), j, i);
            assert_relative_eq!(a, expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn classical_gradient_hand_value() {
        let z = array![[0.0], [1.0]];
        let grad = grad_action(&path2(), z.view(), &PsiFamily::Classical);
        assert_eq!(grad, array![[-2.0], [2.0]]);
    }

    #[test]
    fn constant_embedding_has_zero_gradient() {
        let g = random_graph(8, 2);
        let z = Array2::from_elem((8, 2), -1.3);
        let psi = PsiFamily::Parametric(ParametricPsi::random(&g, 3));
        assert!(grad_action(&g, z.view(), &psi).iter().all(|&v| v == 0.0));
    }

    /// Central finite differences of the action.
    fn fd_grad(g: &Graph, z: &Array2<f64>, psi: &PsiFamily, h: f64) -> Array2<f64> {
        let mut grad = Array2::zeros(z.dim());
        for k in 0..z.nrows() {
            for c in 0..z.ncols() {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[[k, c]] += h;
                zm[[k, c]] -= h;
                grad[[k, c]] =
                    (action(g, zp.view(), psi) - action(g, zm.view(), psi)) / (2.0 * h);
            }
        }
        grad
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..8u64 {
            let n = 5 + (seed as usize % 10);
            let g = random_graph(n, seed);
            let z = random_embedding(n, 1 + (seed as usize % 3), seed + 40);
            for psi in [
                PsiFamily::Classical,
                PsiFamily::Parametric(ParametricPsi::random(&g, seed + 80)),
            ] {
                let analytic = grad_action(&g, z.view(), &psi);
                let fd = fd_grad(&g, &z, &psi, 1e-5);
                let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
                let diff = (&analytic - &fd).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(diff / scale < 1e-5, "seed {seed}: rel diff {}", diff / scale);
            }
        }
    }

    #[test]
    fn flow_is_monotone_and_matches_weighted_stencil() {
        for seed in 0..4u64 {
            let g = random_graph(8, seed + 20);
            let z0 = random_embedding(8, 2, seed + 60);
            for psi in [
                PsiFamily::Classical,
                PsiFamily::Parametric(ParametricPsi::random(&g, seed)),
            ] {
                let report = verify_gradient_flow(&g, z0.view(), &psi, 150, 0.01);
                assert!(report.monotone, "violation at {:?}", report.first_violation);
                assert!(report.max_flow_mismatch < 1e-12, "{}", report.max_flow_mismatch);
            }
        }
    }

    #[test]
    fn constant_start_keeps_zero_action() {
        let g = random_graph(6, 31);
        let z0 = Array2::from_elem((6, 2), 2.5);
        let report = verify_gradient_flow(&g, z0.view(), &PsiFamily::Classical, 50, 0.01);
        assert!(report.action_values.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn classical_two_node_flow_follows_exponential_decay() {
        // With coefficient 2 the difference obeys d(diff)/dt = -4 diff, so
        // S(t) = e^{-8t} S(0). Explicit Euler at tau = 1e-3 keeps a
        // first-order-in-tau gap: |1 - (1 - 4*tau)^{2/ (8 tau)} ...| of
        // about 1.6e-3 relative at t = 0.1.
        let z0 = array![[0.0], [1.0]];
        let report = verify_gradient_flow(&path2(), z0.view(), &PsiFamily::Classical, 100, 0.001);
        let s_end = *report.action_values.last().unwrap();
        let exact = (-0.8f64).exp() * report.action_values[0];
        assert_relative_eq!(s_end, exact, max_relative = 2e-3);
        assert!(report.monotone);
    }

    #[test]
    fn classical_flow_decays_toward_zero() {
        let g = random_graph(6, 77);
        let z0 = random_embedding(6, 2, 78);
        let report = verify_gradient_flow(&g, z0.view(), &PsiFamily::Classical, 2000, 0.01);
        let values = &report.action_values;
        assert!(report.monotone);
        // strictly decreasing until within 1e-12 of the limit (zero)
        for w in values.windows(2) {
            if w[0] > 1e-12 {
                assert!(w[1] < w[0], "stalled at {}", w[0]);
            }
        }
        assert!(*values.last().unwrap() < 1e-12);
    }
}
