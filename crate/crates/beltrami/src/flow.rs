//! Right-hand side of the joint diffusion, the explicit-step operator, and
//! stencil rewiring.
//!
//! A state couples positional and feature coordinates; both blocks evolve
//! under the same attention weights, computed on the joint coordinates
//! `(u_i, alpha * x_i)`. The stencil may be the input graph, a kNN graph
//! precomputed on the initial positions, or a kNN graph refreshed as the
//! positions move.

use ndarray::{Array2, ArrayView2, Axis};

use crate::diffusivity::{self, DiffusivityParams, EdgeWeights};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metric::MetricSpace;
use crate::solvers::{FlowField, StateDeriv};

/// Joint embedding of a graph: per-node positions (`n x d_pos`), features
/// (`n x d_feat`), and the feature scaling entering the joint coordinate
/// `z_i = (u_i, alpha * x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub positions: Array2<f64>,
    pub features: Array2<f64>,
    pub alpha: f64,
}

impl JointState {
    pub fn new(positions: Array2<f64>, features: Array2<f64>, alpha: f64) -> Result<Self> {
        if positions.nrows() != features.nrows() {
            return Err(Error::DimMismatch(format!(
                "{} position rows vs {} feature rows",
                positions.nrows(),
                features.nrows()
            )));
        }
        if alpha < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha must be non-negative, got {alpha}"
            )));
        }
        let s = Self {
            positions,
            features,
            alpha,
        };
        if !s.all_finite() {
            return Err(Error::InvalidParameter("non-finite state entry".into()));
        }
        Ok(s)
    }

    /// Feature-only state (`d_pos = 0`).
    pub fn features_only(features: Array2<f64>, alpha: f64) -> Result<Self> {
        let n = features.nrows();
        Self::new(Array2::zeros((n, 0)), features, alpha)
    }

    pub fn n(&self) -> usize {
        self.positions.nrows()
    }

    pub fn pos_dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn feat_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn joint_dim(&self) -> usize {
        self.pos_dim() + self.feat_dim()
    }

    /// Joint coordinate matrix `[U | alpha * X]`.
    pub fn joint(&self) -> Array2<f64> {
        let mut z = Array2::zeros((self.n(), self.joint_dim()));
        z.slice_mut(ndarray::s![.., ..self.pos_dim()])
            .assign(&self.positions);
        let mut feat = self.features.clone();
        feat *= self.alpha;
        z.slice_mut(ndarray::s![.., self.pos_dim()..]).assign(&feat);
        z
    }

    pub fn all_finite(&self) -> bool {
        self.positions.iter().all(|v| v.is_finite())
            && self.features.iter().all(|v| v.is_finite())
            && self.alpha.is_finite()
    }

    /// `self + h * deriv`.
    pub fn add_scaled(&self, h: f64, d: &StateDeriv) -> JointState {
        JointState {
            positions: &self.positions + &(h * &d.d_positions),
            features: &self.features + &(h * &d.d_features),
            alpha: self.alpha,
        }
    }

    /// Largest absolute difference across both blocks.
    pub fn max_abs_diff(&self, other: &JointState) -> f64 {
        let dp = (&self.positions - &other.positions)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let df = (&self.features - &other.features)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        dp.max(df)
    }
}

/// Time derivative of both blocks under given edge weights:
/// `d u_i = sum_j a_ij (u_j - u_i)` and likewise for features. The
/// feature block is differentiated unscaled; with constant `alpha` this is
/// equivalent to evolving the scaled block.
pub fn rhs_with_weights(g: &Graph, state: &JointState, weights: &EdgeWeights) -> StateDeriv {
    debug_assert_eq!(weights.values.len(), g.edge_count());
    let mut d_positions = Array2::zeros(self_dim(&state.positions));
    let mut d_features = Array2::zeros(self_dim(&state.features));
    accumulate_block(g, weights, &state.positions.view(), &mut d_positions);
    accumulate_block(g, weights, &state.features.view(), &mut d_features);
    StateDeriv {
        d_positions,
        d_features,
    }
}

fn self_dim(a: &Array2<f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

fn accumulate_block(
    g: &Graph,
    weights: &EdgeWeights,
    block: &ArrayView2<f64>,
    out: &mut Array2<f64>,
) {
    for (i, j, slot) in g.directed_edges() {
        let a = weights.values[slot];
        let (zi, zj) = (block.index_axis(Axis(0), i), block.index_axis(Axis(0), j));
        let mut row = out.index_axis_mut(Axis(0), i);
        row.zip_mut_with(&(&zj - &zi), |o, &d| *o += a * d);
    }
}

/// Attention weights followed by [`rhs_with_weights`].
pub fn rhs(g: &Graph, state: &JointState, params: &DiffusivityParams) -> Result<StateDeriv> {
    let weights = edge_weights(g, state, params)?;
    Ok(rhs_with_weights(g, state, &weights))
}

/// Diffusion weights of a state on a stencil.
pub fn edge_weights(
    g: &Graph,
    state: &JointState,
    params: &DiffusivityParams,
) -> Result<EdgeWeights> {
    diffusivity::compute(g, state.joint().view(), params)
}

/// One explicit update as a sparse row-stochastic operator: diagonal
/// `1 - tau * sum_l a_il`, off-diagonal `tau * a_ij` on stencil edges.
/// Rows of isolated nodes are unit basis rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionOperator {
    pub stencil: Graph,
    pub diag: Vec<f64>,
    /// `tau * a_ij`, aligned with the stencil's directed edge slots.
    pub off_diag: Vec<f64>,
}

impl DiffusionOperator {
    pub fn apply(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let g = &self.stencil;
        let mut out = Array2::zeros((z.nrows(), z.ncols()));
        for i in 0..g.n() {
            let zi = z.index_axis(Axis(0), i);
            let mut row = out.index_axis_mut(Axis(0), i);
            row.zip_mut_with(&zi, |o, &v| *o = self.diag[i] * v);
        }
        for (i, j, slot) in g.directed_edges() {
            let a = self.off_diag[slot];
            let zj = z.index_axis(Axis(0), j);
            let mut row = out.index_axis_mut(Axis(0), i);
            row.zip_mut_with(&zj, |o, &v| *o += a * v);
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.stencil.n();
        let mut q = Array2::zeros((n, n));
        for i in 0..n {
            q[[i, i]] = self.diag[i];
        }
        for (i, j, slot) in self.stencil.directed_edges() {
            q[[i, j]] = self.off_diag[slot];
        }
        q
    }
}

pub fn build_q(g: &Graph, weights: &EdgeWeights, tau: f64) -> Result<DiffusionOperator> {
    if tau <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive, got {tau}"
        )));
    }
    let mut diag = vec![1.0; g.n()];
    let mut off_diag = vec![0.0; g.edge_count()];
    for (i, _, slot) in g.directed_edges() {
        let a = weights.values[slot];
        diag[i] -= tau * a;
        off_diag[slot] = tau * a;
    }
    Ok(DiffusionOperator {
        stencil: g.clone(),
        diag,
        off_diag,
    })
}

/// Stencil selection policies. `base` is the input graph, returned verbatim
/// in `Fixed` mode and used only for its node count otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RewiringPolicy {
    pub mode: RewiringMode,
    pub base: Graph,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewiringMode {
    Fixed,
    /// kNN on the initial positions, then frozen.
    PrecomputedKnn { k: usize },
    /// kNN refreshed every `refresh_every` accepted solver steps.
    AdaptiveKnn { k: usize, refresh_every: usize },
    /// Edge iff distance < r.
    Radius { r: f64 },
}

impl RewiringPolicy {
    pub fn fixed(base: Graph) -> Self {
        Self {
            mode: RewiringMode::Fixed,
            base,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self.mode {
            RewiringMode::PrecomputedKnn { k } | RewiringMode::AdaptiveKnn { k, .. } => {
                if k < 1 {
                    return Err(Error::InvalidParameter("k must be >= 1".into()));
                }
                if k >= n {
                    return Err(Error::InvalidParameter(format!(
                        "k = {k} must be smaller than the node count {n}"
                    )));
                }
                if let RewiringMode::AdaptiveKnn { refresh_every, .. } = self.mode {
                    if refresh_every < 1 {
                        return Err(Error::InvalidParameter("refresh_every must be >= 1".into()));
                    }
                }
            }
            RewiringMode::Radius { r } => {
                if r <= 0.0 {
                    return Err(Error::InvalidParameter("radius must be positive".into()));
                }
            }
            RewiringMode::Fixed => {}
        }
        Ok(())
    }
}

/// Applies a rewiring policy to positional coordinates. kNN picks each
/// node's k nearest distinct nodes (ties by smaller id) and symmetrizes by
/// union; radius keeps every pair closer than r.
pub fn rewire(policy: &RewiringPolicy, positions: ArrayView2<f64>, m: &MetricSpace) -> Result<Graph> {
    policy.validate(positions.nrows())?;
    match policy.mode {
        RewiringMode::Fixed => Ok(policy.base.clone()),
        RewiringMode::PrecomputedKnn { k } | RewiringMode::AdaptiveKnn { k, .. } => {
            knn_graph(positions, k, m)
        }
        RewiringMode::Radius { r } => radius_graph(positions, r, m),
    }
}

/// Union-symmetrized k-nearest-neighbor graph under a metric.
pub fn knn_graph(positions: ArrayView2<f64>, k: usize, m: &MetricSpace) -> Result<Graph> {
    let n = positions.nrows();
    if k >= n {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must be smaller than the node count {n}"
        )));
    }
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| positions.row(i).to_slice().expect("standard layout"))
        .collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        for (j, row) in rows.iter().enumerate() {
            if j != i {
                order.push((m.distance(rows[i], row)?, j));
            }
        }
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in order.iter().take(k) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    Ok(Graph::from_adjacency(adj))
}

fn radius_graph(positions: ArrayView2<f64>, r: f64, m: &MetricSpace) -> Result<Graph> {
    let n = positions.nrows();
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| positions.row(i).to_slice().expect("standard layout"))
        .collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if m.distance(rows[i], rows[j])? < r {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    Ok(Graph::from_adjacency(adj))
}

/// Attention-weighted residual feature update on a fixed stencil:
/// `x_i <- x_i + tau * sum_j a(x_i, x_j)(x_j - x_i)`. Requires a
/// feature-only configuration; equals one explicit step of the joint flow
/// restricted to features.
pub fn gat_reduction_step(
    g: &Graph,
    features: ArrayView2<f64>,
    params: &DiffusivityParams,
    tau: f64,
) -> Result<Array2<f64>> {
    if params.pos_dim != 0 {
        return Err(Error::InvalidParameter(
            "feature-only update requires pos_dim = 0".into(),
        ));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive, got {tau}"
        )));
    }
    let weights = diffusivity::compute(g, features, params)?;
    let mut out = features.to_owned();
    for (i, j, slot) in g.directed_edges() {
        let a = weights.values[slot];
        for c in 0..features.ncols() {
            out[[i, c]] += tau * a * (features[[j, c]] - features[[i, c]]);
        }
    }
    Ok(out)
}

/// The joint diffusion as a solver-ready vector field with its rewiring
/// policy attached. kNN policies rewire once at construction from the
/// initial positions; the adaptive policy additionally refreshes the
/// stencil every `refresh_every` accepted steps from the current positions.
#[derive(Debug, Clone)]
pub struct BeltramiFlow {
    graph: Graph,
    params: DiffusivityParams,
    policy: RewiringPolicy,
    metric: MetricSpace,
    accepted: usize,
}

impl BeltramiFlow {
    pub fn new(
        policy: RewiringPolicy,
        metric: MetricSpace,
        params: DiffusivityParams,
        initial_positions: ArrayView2<f64>,
    ) -> Result<Self> {
        params.validate()?;
        let graph = match policy.mode {
            RewiringMode::Fixed => policy.base.clone(),
            _ => rewire(&policy, initial_positions, &metric)?,
        };
        Ok(Self {
            graph,
            params,
            policy,
            metric,
            accepted: 0,
        })
    }

    pub fn current_graph(&self) -> &Graph {
        &self.graph
    }

    pub fn weights(&self, state: &JointState) -> Result<EdgeWeights> {
        edge_weights(&self.graph, state, &self.params)
    }
}

impl FlowField for BeltramiFlow {
    fn rhs(&self, state: &JointState) -> Result<StateDeriv> {
        rhs(&self.graph, state, &self.params)
    }

    fn on_accepted_step(&mut self, state: &JointState) -> Result<()> {
        if let RewiringMode::AdaptiveKnn { k, refresh_every } = self.policy.mode {
            self.accepted += 1;
            if self.accepted.is_multiple_of(refresh_every) {
                self.graph = knn_graph(state.positions.view(), k, &self.metric)?;
            }
        }
        Ok(())
    }
}

/// A linear field: the stencil and weights are held fixed at the values
/// they were built with.
#[derive(Debug, Clone)]
pub struct FrozenFlow {
    pub graph: Graph,
    pub weights: EdgeWeights,
}

impl FlowField for FrozenFlow {
    fn rhs(&self, state: &JointState) -> Result<StateDeriv> {
        Ok(rhs_with_weights(&self.graph, state, &self.weights))
    }
}
