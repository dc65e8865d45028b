//! Per-edge diffusion weights from learnable attention.
//!
//! A kernel maps a pair of joint coordinates to a raw logit through shared
//! key/query projections; a normalizer turns each node's logits over its
//! stencil neighbors into non-negative weights summing to one. Parameters
//! are time-independent: the same weights apply at every step of a flow.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Kernel {
    ScaledDot,
    CosineSim,
    Pearson,
    ExpKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Normalizer {
    Softmax,
    Squareplus,
}

/// Scales of the exponential kernel; unused by the other kernels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExpKernelParams {
    pub sigma_pos: f64,
    pub sigma_feat: f64,
    pub length_pos: f64,
    pub length_feat: f64,
}

impl Default for ExpKernelParams {
    fn default() -> Self {
        Self {
            sigma_pos: 1.0,
            sigma_feat: 1.0,
            length_pos: 1.0,
            length_feat: 1.0,
        }
    }
}

impl ExpKernelParams {
    fn validate(&self) -> Result<()> {
        if self.length_pos <= 0.0 || self.length_feat <= 0.0 {
            return Err(Error::InvalidParameter(
                "exponential-kernel length scales must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusivityParams {
    pub kernel: Kernel,
    /// Key projection, `d_k x (d_pos + d_feat)`.
    pub w_key: Array2<f64>,
    /// Query projection, same shape as `w_key`.
    pub w_query: Array2<f64>,
    /// Width of the positional block of a joint coordinate.
    pub pos_dim: usize,
    pub normalizer: Normalizer,
    pub exp_kernel: ExpKernelParams,
}

impl DiffusivityParams {
    /// Constant initialization: every projection entry equals
    /// `1 / sqrt(d_k * (d_pos + d_feat))`, giving a well-conditioned
    /// starting system.
    pub fn constant_init(
        kernel: Kernel,
        normalizer: Normalizer,
        key_dim: usize,
        pos_dim: usize,
        feat_dim: usize,
    ) -> Self {
        let joint = pos_dim + feat_dim;
        let c = 1.0 / ((key_dim * joint) as f64).sqrt();
        Self {
            kernel,
            w_key: Array2::from_elem((key_dim, joint), c),
            w_query: Array2::from_elem((key_dim, joint), c),
            pos_dim,
            normalizer,
            exp_kernel: ExpKernelParams::default(),
        }
    }

    pub fn key_dim(&self) -> usize {
        self.w_key.nrows()
    }

    pub fn joint_dim(&self) -> usize {
        self.w_key.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_dim() < 1 {
            return Err(Error::InvalidParameter("key dim must be >= 1".into()));
        }
        if self.w_query.dim() != self.w_key.dim() {
            return Err(Error::DimMismatch(
                "key and query projections must share a shape".into(),
            ));
        }
        if self.pos_dim > self.joint_dim() {
            return Err(Error::DimMismatch(
                "positional block wider than the joint coordinate".into(),
            ));
        }
        if self.w_key.iter().chain(self.w_query.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite projection entry".into()));
        }
        self.exp_kernel.validate()
    }
}

/// Weights aligned with the directed edge slots of the stencil they were
/// computed on. Rows of nodes with at least one neighbor sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights {
    pub values: Vec<f64>,
    pub stencil: Graph,
}

impl EdgeWeights {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[self.stencil.row_offsets()[i]..self.stencil.row_offsets()[i + 1]]
    }
}

fn matvec(w: &ArrayView2<f64>, z: &[f64]) -> Vec<f64> {
    w.rows()
        .into_iter()
        .map(|r| r.iter().zip(z).map(|(&a, &b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Raw (pre-normalization) logit of a directed pair of joint coordinates.
/// Cosine and Pearson return 0 for degenerate zero-norm projections, which
/// arise under constant initialization.
pub fn raw_logit(params: &DiffusivityParams, z_i: &[f64], z_j: &[f64]) -> Result<f64> {
    let joint = params.joint_dim();
    if z_i.len() != joint || z_j.len() != joint {
        return Err(Error::DimMismatch(format!(
            "joint coordinates of len {} and {} against projections of width {}",
            z_i.len(),
            z_j.len(),
            joint
        )));
    }
    let w_k = params.w_key.view();
    let w_q = params.w_query.view();
    Ok(match params.kernel {
        Kernel::ScaledDot => {
            let k = matvec(&w_k, z_i);
            let q = matvec(&w_q, z_j);
            dot(&k, &q) / params.key_dim() as f64
        }
        Kernel::CosineSim => {
            let k = matvec(&w_k, z_i);
            let q = matvec(&w_q, z_j);
            let nk = norm(&k);
            let nq = norm(&q);
            if nk == 0.0 || nq == 0.0 {
                0.0
            } else {
                dot(&k, &q) / (nk * nq)
            }
        }
        Kernel::Pearson => {
            let mut k = matvec(&w_k, z_i);
            let mut q = matvec(&w_q, z_j);
            let mk = k.iter().sum::<f64>() / k.len() as f64;
            let mq = q.iter().sum::<f64>() / q.len() as f64;
            for v in &mut k {
                *v -= mk;
            }
            for v in &mut q {
                *v -= mq;
            }
            let nk = norm(&k);
            let nq = norm(&q);
            if nk == 0.0 || nq == 0.0 {
                0.0
            } else {
                dot(&k, &q) / (nk * nq)
            }
        }
        Kernel::ExpKernel => {
            let d_pos = params.pos_dim;
            let (u_i, x_i) = z_i.split_at(d_pos);
            let (u_j, x_j) = z_j.split_at(d_pos);
            let wk_pos = w_k.slice(ndarray::s![.., ..d_pos]);
            let wq_pos = w_q.slice(ndarray::s![.., ..d_pos]);
            let wk_feat = w_k.slice(ndarray::s![.., d_pos..]);
            let wq_feat = w_q.slice(ndarray::s![.., d_pos..]);
            let du: f64 = matvec(&wk_pos, u_i)
                .iter()
                .zip(&matvec(&wq_pos, u_j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let dx: f64 = matvec(&wk_feat, x_i)
                .iter()
                .zip(&matvec(&wq_feat, x_j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let e = &params.exp_kernel;
            (e.sigma_pos * e.sigma_feat).powi(2)
                * (-du / (2.0 * e.length_pos * e.length_pos)).exp()
                * (-dx / (2.0 * e.length_feat * e.length_feat)).exp()
        }
    })
}

pub fn squareplus(x: f64) -> f64 {
    0.5 * (x + (x * x + 4.0).sqrt())
}

/// Normalizes logits (aligned with the stencil's directed edge slots) per
/// source node. Nodes with no neighbors keep an empty row.
pub fn normalize_weights(g: &Graph, logits: &[f64], normalizer: Normalizer) -> EdgeWeights {
    assert_eq!(logits.len(), g.edge_count());
    let mut values = vec![0.0; logits.len()];
    for i in 0..g.n() {
        let lo = g.row_offsets()[i];
        let hi = g.row_offsets()[i + 1];
        if lo == hi {
            continue;
        }
        let row = &logits[lo..hi];
        match normalizer {
            Normalizer::Softmax => {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (k, &l) in row.iter().enumerate() {
                    let e = (l - m).exp();
                    values[lo + k] = e;
                    sum += e;
                }
                for v in &mut values[lo..hi] {
                    *v /= sum;
                }
            }
            Normalizer::Squareplus => {
                let mut sum = 0.0;
                for (k, &l) in row.iter().enumerate() {
                    let s = squareplus(l);
                    values[lo + k] = s;
                    sum += s;
                }
                for v in &mut values[lo..hi] {
                    *v /= sum;
                }
            }
        }
    }
    EdgeWeights {
        values,
        stencil: g.clone(),
    }
}

/// Full attention pass: raw logits per directed edge composed with the
/// per-node normalizer. `z` holds one joint coordinate per row.
pub fn compute(g: &Graph, z: ArrayView2<f64>, params: &DiffusivityParams) -> Result<EdgeWeights> {
    params.validate()?;
    if z.nrows() != g.n() {
        return Err(Error::DimMismatch(format!(
            "{} coordinate rows for a graph with {} nodes",
            z.nrows(),
            g.n()
        )));
    }
    if z.ncols() != params.joint_dim() {
        return Err(Error::DimMismatch(format!(
            "joint dim {} != projection width {}",
            z.ncols(),
            params.joint_dim()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..g.n()).map(|i| z.row(i).to_vec()).collect();
    let mut logits = vec![0.0; g.edge_count()];
    for (i, j, slot) in g.directed_edges() {
        logits[slot] = raw_logit(params, &rows[i], &rows[j])?;
    }
    Ok(normalize_weights(g, &logits, params.normalizer))
}
