//! Transductive node classification on top of the joint diffusion.
//!
//! The model is an affine positional encoder, an affine feature encoder
//! with a learnable non-negative feature scaling, the attention-weighted
//! flow integrated to a terminal time, and an affine decoder to class
//! logits. Training runs full-batch gradient descent through a fixed-step
//! unroll of the solver; gradients come either from reverse-mode
//! differentiation of the whole computation or from central finite
//! differences, and the two must agree.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Scalar, Tape};
use crate::diffusivity::{DiffusivityParams, ExpKernelParams, Kernel, Normalizer};
use crate::error::{Error, Result};
use crate::flow::{BeltramiFlow, JointState, RewiringPolicy};
use crate::graph::Graph;
use crate::metric::MetricSpace;
use crate::solvers::{self, fixed_step_sizes, SolverConfig, SolverMethod};

/// Static architecture description; the flat parameter vector is laid out
/// against it.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ModelShape {
    pub raw_pos_dim: usize,
    pub raw_feat_dim: usize,
    /// Encoded positional width d'.
    pub pos_dim: usize,
    /// Encoded feature width d.
    pub feat_dim: usize,
    pub key_dim: usize,
    pub classes: usize,
    pub kernel: Kernel,
    pub normalizer: Normalizer,
    pub exp_kernel: ExpKernelParams,
}

impl ModelShape {
    pub fn joint_dim(&self) -> usize {
        self.pos_dim + self.feat_dim
    }

    pub fn param_count(&self) -> usize {
        self.offsets().end
    }

    fn offsets(&self) -> Offsets {
        let phi_w = 0;
        let phi_b = phi_w + self.pos_dim * self.raw_pos_dim;
        let psi_w = phi_b + self.pos_dim;
        let psi_b = psi_w + self.feat_dim * self.raw_feat_dim;
        let alpha = psi_b + self.feat_dim;
        let w_key = alpha + 1;
        let w_query = w_key + self.key_dim * self.joint_dim();
        let xi_w = w_query + self.key_dim * self.joint_dim();
        let xi_b = xi_w + self.classes * self.joint_dim();
        let end = xi_b + self.classes;
        Offsets {
            phi_w,
            phi_b,
            psi_w,
            psi_b,
            alpha,
            w_key,
            w_query,
            xi_w,
            xi_b,
            end,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_dim < 1 {
            return Err(Error::InvalidParameter("key_dim must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidParameter("need at least two classes".into()));
        }
        if self.feat_dim < 1 {
            return Err(Error::InvalidParameter("feat_dim must be >= 1".into()));
        }
        if self.joint_dim() < 1 {
            return Err(Error::InvalidParameter("joint dim must be >= 1".into()));
        }
        self.exp_kernel_checked()
    }

    fn exp_kernel_checked(&self) -> Result<()> {
        if self.exp_kernel.length_pos <= 0.0 || self.exp_kernel.length_feat <= 0.0 {
            return Err(Error::InvalidParameter(
                "exponential-kernel length scales must be positive".into(),
            ));
        }
        Ok(())
    }
}

struct Offsets {
    phi_w: usize,
    phi_b: usize,
    psi_w: usize,
    psi_b: usize,
    alpha: usize,
    w_key: usize,
    w_query: usize,
    xi_w: usize,
    xi_b: usize,
    end: usize,
}

/// Flat learnable state paired with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization: affine maps uniform in `±1/sqrt(fan_in)`,
    /// `alpha = 1`, and the constant attention initialization.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let off = shape.offsets();
        let mut values = vec![0.0; off.end];
        let mut affine = |values: &mut Vec<f64>, w0: usize, rows: usize, cols: usize, b0: usize| {
            let bound = 1.0 / (cols.max(1) as f64).sqrt();
            for v in &mut values[w0..w0 + rows * cols] {
                *v = rng.gen_range(-bound..bound);
            }
            for v in &mut values[b0..b0 + rows] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        affine(&mut values, off.phi_w, shape.pos_dim, shape.raw_pos_dim, off.phi_b);
        affine(&mut values, off.psi_w, shape.feat_dim, shape.raw_feat_dim, off.psi_b);
        affine(&mut values, off.xi_w, shape.classes, shape.joint_dim(), off.xi_b);
        values[off.alpha] = 1.0;
        let c = 1.0 / ((shape.key_dim * shape.joint_dim()) as f64).sqrt();
        for v in &mut values[off.w_key..off.w_key + 2 * shape.key_dim * shape.joint_dim()] {
            *v = c;
        }
        Ok(Self { shape, values })
    }

    pub fn alpha(&self) -> f64 {
        self.values[self.shape.offsets().alpha]
    }

    /// Attention parameters materialized for the f64 flow modules.
    pub fn diffusivity(&self) -> DiffusivityParams {
        let off = self.shape.offsets();
        let (dk, jd) = (self.shape.key_dim, self.shape.joint_dim());
        let take = |start: usize| {
            Array2::from_shape_vec((dk, jd), self.values[start..start + dk * jd].to_vec())
                .expect("layout matches shape")
        };
        DiffusivityParams {
            kernel: self.shape.kernel,
            w_key: take(off.w_key),
            w_query: take(off.w_query),
            pos_dim: self.shape.pos_dim,
            normalizer: self.shape.normalizer,
            exp_kernel: self.shape.exp_kernel,
        }
    }

    /// Encodes raw inputs into the initial joint state.
    pub fn encode(&self, raw_pos: ArrayView2<f64>, raw_feat: ArrayView2<f64>) -> Result<JointState> {
        check_inputs(&self.shape, raw_pos, raw_feat)?;
        let n = raw_feat.nrows();
        let off = self.shape.offsets();
        let positions = affine_f64(
            &self.values,
            off.phi_w,
            off.phi_b,
            self.shape.pos_dim,
            self.shape.raw_pos_dim,
            raw_pos,
        );
        let features = affine_f64(
            &self.values,
            off.psi_w,
            off.psi_b,
            self.shape.feat_dim,
            self.shape.raw_feat_dim,
            raw_feat,
        );
        debug_assert_eq!(positions.nrows(), n);
        JointState::new(positions, features, self.alpha().max(0.0))
    }

    /// Decodes a state into per-node class logits.
    pub fn decode(&self, state: &JointState) -> Array2<f64> {
        let off = self.shape.offsets();
        let joint = state.joint();
        let mut out = Array2::zeros((state.n(), self.shape.classes));
        for i in 0..state.n() {
            for r in 0..self.shape.classes {
                let mut acc = self.values[off.xi_b + r];
                for c in 0..self.shape.joint_dim() {
                    acc += self.values[off.xi_w + r * self.shape.joint_dim() + c] * joint[[i, c]];
                }
                out[[i, r]] = acc;
            }
        }
        out
    }
}

fn affine_f64(
    values: &[f64],
    w0: usize,
    b0: usize,
    rows: usize,
    cols: usize,
    input: ArrayView2<f64>,
) -> Array2<f64> {
    let n = input.nrows();
    let mut out = Array2::zeros((n, rows));
    for i in 0..n {
        for r in 0..rows {
            let mut acc = values[b0 + r];
            for c in 0..cols {
                acc += values[w0 + r * cols + c] * input[[i, c]];
            }
            out[[i, r]] = acc;
        }
    }
    out
}

fn check_inputs(shape: &ModelShape, raw_pos: ArrayView2<f64>, raw_feat: ArrayView2<f64>) -> Result<()> {
    if raw_pos.nrows() != raw_feat.nrows() {
        return Err(Error::DimMismatch(format!(
            "{} position rows vs {} feature rows",
            raw_pos.nrows(),
            raw_feat.nrows()
        )));
    }
    if raw_pos.ncols() != shape.raw_pos_dim {
        return Err(Error::DimMismatch(format!(
            "raw positional dim {} != shape's {}",
            raw_pos.ncols(),
            shape.raw_pos_dim
        )));
    }
    if raw_feat.ncols() != shape.raw_feat_dim {
        return Err(Error::DimMismatch(format!(
            "raw feature dim {} != shape's {}",
            raw_feat.ncols(),
            shape.raw_feat_dim
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Generic differentiable forward pass
// ---------------------------------------------------------------------------

/// Per-node class logits (`n * classes`, row-major) of the full model under
/// a fixed-step unroll; generic over the scalar so the same code serves
/// plain evaluation and reverse-mode differentiation. `t_end = 0` skips
/// the diffusion entirely (encoder-decoder baseline).
#[allow(clippy::too_many_arguments)]
pub fn forward_logits<S: Scalar>(
    shape: &ModelShape,
    theta: &[S],
    g: &Graph,
    raw_pos: ArrayView2<f64>,
    raw_feat: ArrayView2<f64>,
    method: SolverMethod,
    tau: f64,
    t_end: f64,
) -> Vec<S> {
    assert_eq!(theta.len(), shape.param_count(), "flat parameter length");
    let n = g.n();
    let off = shape.offsets();

    let mut u = affine_generic(theta, off.phi_w, off.phi_b, shape.pos_dim, shape.raw_pos_dim, raw_pos);
    let mut x = affine_generic(theta, off.psi_w, off.psi_b, shape.feat_dim, shape.raw_feat_dim, raw_feat);
    let alpha = theta[off.alpha];

    for h in fixed_step_sizes(tau, t_end) {
        match method {
            SolverMethod::Euler => {
                let (du, dx) = attention_rhs(shape, theta, g, alpha, &u, &x);
                add_scaled(&mut u, &du, h);
                add_scaled(&mut x, &dx, h);
            }
            SolverMethod::Rk4 => {
                let (k1u, k1x) = attention_rhs(shape, theta, g, alpha, &u, &x);
                let (u2, x2) = stepped(&u, &x, &k1u, &k1x, h / 2.0);
                let (k2u, k2x) = attention_rhs(shape, theta, g, alpha, &u2, &x2);
                let (u3, x3) = stepped(&u, &x, &k2u, &k2x, h / 2.0);
                let (k3u, k3x) = attention_rhs(shape, theta, g, alpha, &u3, &x3);
                let (u4, x4) = stepped(&u, &x, &k3u, &k3x, h);
                let (k4u, k4x) = attention_rhs(shape, theta, g, alpha, &u4, &x4);
                for (dst, (((a, b), c), d)) in u
                    .iter_mut()
                    .zip(k1u.iter().zip(&k2u).zip(&k3u).zip(&k4u))
                {
                    let sum = *a + b.scale(2.0) + c.scale(2.0) + *d;
                    *dst = *dst + sum.scale(h / 6.0);
                }
                for (dst, (((a, b), c), d)) in x
                    .iter_mut()
                    .zip(k1x.iter().zip(&k2x).zip(&k3x).zip(&k4x))
                {
                    let sum = *a + b.scale(2.0) + c.scale(2.0) + *d;
                    *dst = *dst + sum.scale(h / 6.0);
                }
            }
            SolverMethod::Dopri5 => {
                unreachable!("training forward is fixed-step only");
            }
        }
    }

    // decode [U | alpha X] row by row
    let jd = shape.joint_dim();
    let mut logits = Vec::with_capacity(n * shape.classes);
    for i in 0..n {
        for r in 0..shape.classes {
            let mut acc = theta[off.xi_b + r];
            for c in 0..shape.pos_dim {
                acc = acc + theta[off.xi_w + r * jd + c] * u[i * shape.pos_dim + c];
            }
            for c in 0..shape.feat_dim {
                acc = acc
                    + theta[off.xi_w + r * jd + shape.pos_dim + c]
                        * (alpha * x[i * shape.feat_dim + c]);
            }
            logits.push(acc);
        }
    }
    logits
}

fn affine_generic<S: Scalar>(
    theta: &[S],
    w0: usize,
    b0: usize,
    rows: usize,
    cols: usize,
    input: ArrayView2<f64>,
) -> Vec<S> {
    let n = input.nrows();
    let mut out = Vec::with_capacity(n * rows);
    for i in 0..n {
        for r in 0..rows {
            let mut acc = theta[b0 + r];
            for c in 0..cols {
                acc = acc + theta[w0 + r * cols + c].scale(input[[i, c]]);
            }
            out.push(acc);
        }
    }
    out
}

fn add_scaled<S: Scalar>(dst: &mut [S], src: &[S], h: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + s.scale(h);
    }
}

fn stepped<S: Scalar>(u: &[S], x: &[S], du: &[S], dx: &[S], h: f64) -> (Vec<S>, Vec<S>) {
    let mut u2 = u.to_vec();
    let mut x2 = x.to_vec();
    add_scaled(&mut u2, du, h);
    add_scaled(&mut x2, dx, h);
    (u2, x2)
}

/// Attention-weighted diffusion derivative of both blocks, mirroring the
/// f64 path through the diffusivity and flow modules.
fn attention_rhs<S: Scalar>(
    shape: &ModelShape,
    theta: &[S],
    g: &Graph,
    alpha: S,
    u: &[S],
    x: &[S],
) -> (Vec<S>, Vec<S>) {
    let n = g.n();
    let off = shape.offsets();
    let (dp, df, dk, jd) = (shape.pos_dim, shape.feat_dim, shape.key_dim, shape.joint_dim());
    let zero = alpha.lift(0.0);

    // joint coordinates
    let mut z = Vec::with_capacity(n * jd);
    for i in 0..n {
        for c in 0..dp {
            z.push(u[i * dp + c]);
        }
        for c in 0..df {
            z.push(alpha * x[i * df + c]);
        }
    }

    // per-node projections
    let project = |w0: usize, row: &[S]| -> Vec<S> {
        let mut out = Vec::with_capacity(dk);
        for r in 0..dk {
            let mut acc = zero;
            for (c, v) in row.iter().enumerate() {
                acc = acc + theta[w0 + r * jd + c] * *v;
            }
            out.push(acc);
        }
        out
    };
    let project_block = |w0: usize, col0: usize, width: usize, row: &[S]| -> Vec<S> {
        let mut out = Vec::with_capacity(dk);
        for r in 0..dk {
            let mut acc = zero;
            for c in 0..width {
                acc = acc + theta[w0 + r * jd + col0 + c] * row[c];
            }
            out.push(acc);
        }
        out
    };

    let mut logits: Vec<S> = vec![zero; g.edge_count()];
    match shape.kernel {
        Kernel::ScaledDot | Kernel::CosineSim | Kernel::Pearson => {
            let kproj: Vec<Vec<S>> = (0..n).map(|i| project(off.w_key, &z[i * jd..(i + 1) * jd])).collect();
            let qproj: Vec<Vec<S>> = (0..n).map(|i| project(off.w_query, &z[i * jd..(i + 1) * jd])).collect();
            for (i, j, slot) in g.directed_edges() {
                logits[slot] = kernel_logit(shape, alpha, &kproj[i], &qproj[j]);
            }
        }
        Kernel::ExpKernel => {
            let ku: Vec<Vec<S>> = (0..n)
                .map(|i| project_block(off.w_key, 0, dp, &z[i * jd..i * jd + dp]))
                .collect();
            let qu: Vec<Vec<S>> = (0..n)
                .map(|i| project_block(off.w_query, 0, dp, &z[i * jd..i * jd + dp]))
                .collect();
            let kx: Vec<Vec<S>> = (0..n)
                .map(|i| project_block(off.w_key, dp, df, &z[i * jd + dp..(i + 1) * jd]))
                .collect();
            let qx: Vec<Vec<S>> = (0..n)
                .map(|i| project_block(off.w_query, dp, df, &z[i * jd + dp..(i + 1) * jd]))
                .collect();
            let e = &shape.exp_kernel;
            let amp = (e.sigma_pos * e.sigma_feat).powi(2);
            for (i, j, slot) in g.directed_edges() {
                let mut dpos = zero;
                for (a, b) in ku[i].iter().zip(&qu[j]) {
                    let d = *a - *b;
                    dpos = dpos + d * d;
                }
                let mut dfeat = zero;
                for (a, b) in kx[i].iter().zip(&qx[j]) {
                    let d = *a - *b;
                    dfeat = dfeat + d * d;
                }
                let expo = dpos.scale(-1.0 / (2.0 * e.length_pos * e.length_pos))
                    + dfeat.scale(-1.0 / (2.0 * e.length_feat * e.length_feat));
                logits[slot] = expo.exp().scale(amp);
            }
        }
    }

    // normalize per source node
    let mut weights: Vec<S> = vec![zero; g.edge_count()];
    for i in 0..n {
        let lo = g.row_offsets()[i];
        let hi = g.row_offsets()[i + 1];
        if lo == hi {
            continue;
        }
        match shape.normalizer {
            Normalizer::Softmax => {
                let mut m = logits[lo];
                for &l in &logits[lo + 1..hi] {
                    if l > m {
                        m = l;
                    }
                }
                let mut sum = zero;
                for (w, &l) in weights[lo..hi].iter_mut().zip(&logits[lo..hi]) {
                    let e = (l - m).exp();
                    *w = e;
                    sum = sum + e;
                }
                for w in &mut weights[lo..hi] {
                    *w = *w / sum;
                }
            }
            Normalizer::Squareplus => {
                let mut sum = zero;
                for (w, &l) in weights[lo..hi].iter_mut().zip(&logits[lo..hi]) {
                    let sp = (l + (l * l + l.lift(4.0)).sqrt()).scale(0.5);
                    *w = sp;
                    sum = sum + sp;
                }
                for w in &mut weights[lo..hi] {
                    *w = *w / sum;
                }
            }
        }
    }

    // accumulate the stencil derivative on the unscaled blocks
    let mut du = vec![zero; n * dp];
    let mut dx = vec![zero; n * df];
    for (i, j, slot) in g.directed_edges() {
        let a = weights[slot];
        for c in 0..dp {
            du[i * dp + c] = du[i * dp + c] + a * (u[j * dp + c] - u[i * dp + c]);
        }
        for c in 0..df {
            dx[i * df + c] = dx[i * df + c] + a * (x[j * df + c] - x[i * df + c]);
        }
    }
    (du, dx)
}

fn kernel_logit<S: Scalar>(shape: &ModelShape, any: S, k: &[S], q: &[S]) -> S {
    let zero = any.lift(0.0);
    match shape.kernel {
        Kernel::ScaledDot => {
            let mut acc = zero;
            for (a, b) in k.iter().zip(q) {
                acc = acc + *a * *b;
            }
            acc.scale(1.0 / shape.key_dim as f64)
        }
        Kernel::CosineSim => {
            let mut dot = zero;
            let mut nk = zero;
            let mut nq = zero;
            for (a, b) in k.iter().zip(q) {
                dot = dot + *a * *b;
                nk = nk + *a * *a;
                nq = nq + *b * *b;
            }
            if nk.value() == 0.0 || nq.value() == 0.0 {
                zero
            } else {
                dot / (nk.sqrt() * nq.sqrt())
            }
        }
        Kernel::Pearson => {
            let inv = 1.0 / k.len() as f64;
            let mut mk = zero;
            let mut mq = zero;
            for (a, b) in k.iter().zip(q) {
                mk = mk + *a;
                mq = mq + *b;
            }
            mk = mk.scale(inv);
            mq = mq.scale(inv);
            let mut dot = zero;
            let mut nk = zero;
            let mut nq = zero;
            for (a, b) in k.iter().zip(q) {
                let ca = *a - mk;
                let cb = *b - mq;
                dot = dot + ca * cb;
                nk = nk + ca * ca;
                nq = nq + cb * cb;
            }
            if nk.value() == 0.0 || nq.value() == 0.0 {
                zero
            } else {
                dot / (nk.sqrt() * nq.sqrt())
            }
        }
        Kernel::ExpKernel => unreachable!("handled separately"),
    }
}

/// Mean cross-entropy over a node subset with a stabilized log-sum-exp.
pub fn loss_from_logits<S: Scalar>(
    logits: &[S],
    classes: usize,
    labels: &[i64],
    subset: &[usize],
) -> Result<S> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let mut acc: Option<S> = None;
    for &i in subset {
        let row = &logits[i * classes..(i + 1) * classes];
        let label = labels[i];
        if label < 0 || label as usize >= classes {
            return Err(Error::InvalidParameter(format!(
                "node {i} has no valid label for supervision"
            )));
        }
        let mut m = row[0];
        for &l in &row[1..] {
            if l > m {
                m = l;
            }
        }
        let mut sum = m.lift(0.0);
        for &l in row {
            sum = sum + (l - m).exp();
        }
        let term = m + sum.ln() - row[label as usize];
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    Ok(acc.unwrap().scale(1.0 / subset.len() as f64))
}

/// Fraction of subset nodes whose argmax logit (ties to the smallest class
/// index) equals the label.
pub fn accuracy_from_logits(logits: &[f64], classes: usize, labels: &[i64], subset: &[usize]) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for &i in subset {
        let row = &logits[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if labels[i] == best as i64 {
            hits += 1;
        }
    }
    hits as f64 / subset.len() as f64
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// A scalar objective of a flat parameter vector, written once and
/// instantiated at plain floats or tape variables.
pub trait Objective {
    fn eval<S: Scalar>(&self, theta: &[S]) -> S;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradMode {
    /// Exact reverse-mode derivative through every stage of the unrolled
    /// solver, the attention, and the encoders.
    UnrolledReverse,
    /// Central differences with step `h` per parameter.
    FiniteDifference { h: f64 },
}

pub fn gradient<O: Objective>(obj: &O, theta: &[f64], mode: GradMode) -> Result<Vec<f64>> {
    let grad = match mode {
        GradMode::UnrolledReverse => {
            let tape = Tape::new();
            let vars: Vec<_> = theta.iter().map(|&v| tape.var(v)).collect();
            let out = obj.eval(&vars);
            tape.gradient(out, &vars)
        }
        GradMode::FiniteDifference { h } => {
            let mut work = theta.to_vec();
            let mut grad = Vec::with_capacity(theta.len());
            for i in 0..theta.len() {
                let orig = work[i];
                work[i] = orig + h;
                let up = obj.eval::<f64>(&work);
                work[i] = orig - h;
                let down = obj.eval::<f64>(&work);
                work[i] = orig;
                grad.push((up - down) / (2.0 * h));
            }
            grad
        }
    };
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(grad)
}

/// Training objective: subset cross-entropy of the fixed-step forward pass.
pub struct BlendObjective<'a> {
    pub shape: &'a ModelShape,
    pub graph: &'a Graph,
    pub raw_pos: ArrayView2<'a, f64>,
    pub raw_feat: ArrayView2<'a, f64>,
    pub labels: &'a [i64],
    pub subset: &'a [usize],
    pub method: SolverMethod,
    pub tau: f64,
    pub t_end: f64,
}

impl Objective for BlendObjective<'_> {
    fn eval<S: Scalar>(&self, theta: &[S]) -> S {
        let logits = forward_logits(
            self.shape,
            theta,
            self.graph,
            self.raw_pos,
            self.raw_feat,
            self.method,
            self.tau,
            self.t_end,
        );
        loss_from_logits(&logits, self.shape.classes, self.labels, self.subset)
            .expect("subset validated at construction")
    }
}

// ---------------------------------------------------------------------------
// Data, training, evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSplits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeSplits {
    pub fn validate(&self, labels: &[i64]) -> Result<()> {
        let mut seen = vec![false; labels.len()];
        for split in [&self.train, &self.val, &self.test] {
            for &i in split {
                if i >= labels.len() {
                    return Err(Error::NodeOutOfRange {
                        id: i,
                        n: labels.len(),
                    });
                }
                if seen[i] {
                    return Err(Error::InvalidParameter(format!(
                        "node {i} appears in more than one split"
                    )));
                }
                seen[i] = true;
            }
        }
        for &i in self.train.iter().chain(&self.val) {
            if labels[i] < 0 {
                return Err(Error::InvalidParameter(format!(
                    "supervised node {i} is unlabeled"
                )));
            }
        }
        Ok(())
    }
}

/// Seeded per-class splits: `train_per_class` and `val_per_class` labeled
/// nodes per class, every remaining labeled node in the test split.
pub fn generate_splits(
    labels: &[i64],
    train_per_class: usize,
    val_per_class: usize,
    seed: u64,
) -> Result<NodeSplits> {
    use rand::seq::SliceRandom;
    let classes = labels.iter().copied().max().unwrap_or(-1) + 1;
    if classes < 2 {
        return Err(Error::InvalidParameter("need at least two labeled classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = NodeSplits {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for class in 0..classes {
        let mut ids: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if ids.len() < train_per_class + val_per_class {
            return Err(Error::InvalidParameter(format!(
                "class {class} has only {} labeled nodes, needs {}",
                ids.len(),
                train_per_class + val_per_class
            )));
        }
        ids.shuffle(&mut rng);
        splits.train.extend(&ids[..train_per_class]);
        splits
            .val
            .extend(&ids[train_per_class..train_per_class + val_per_class]);
        splits.test.extend(&ids[train_per_class + val_per_class..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub raw_positions: Array2<f64>,
    pub raw_features: Array2<f64>,
    pub labels: Vec<i64>,
    pub splits: NodeSplits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub grad_mode: GradMode,
    /// Fixed-step method for the differentiable unroll (Euler or RK4).
    pub method: SolverMethod,
    pub tau: f64,
    /// Terminal time; 0 trains the encoder-decoder composition alone.
    pub t_end: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 150,
            grad_mode: GradMode::UnrolledReverse,
            method: SolverMethod::Euler,
            tau: 0.5,
            t_end: 3.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(Error::InvalidParameter("lr must be non-negative".into()));
        }
        if self.method == SolverMethod::Dopri5 {
            return Err(Error::InvalidParameter(
                "training differentiates a fixed-step unroll; use euler or rk4".into(),
            ));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidParameter("tau must be positive".into()));
        }
        if self.t_end < 0.0 {
            return Err(Error::InvalidParameter("terminal time must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Full-batch gradient descent on the train-subset loss. Records train
/// loss (at the pre-update parameters) and validation accuracy (post
/// update) per epoch and returns the parameters of the epoch with the best
/// validation accuracy (earliest on ties).
pub fn train(
    g: &Graph,
    data: &DataSet,
    params0: &ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochMetrics>)> {
    cfg.validate()?;
    params0.shape.validate()?;
    check_inputs(&params0.shape, data.raw_positions.view(), data.raw_features.view())?;
    data.splits.validate(&data.labels)?;
    if data.splits.train.is_empty() || data.splits.val.is_empty() {
        return Err(Error::EmptySubset);
    }
    let shape = &params0.shape;
    let alpha_idx = shape.offsets().alpha;
    let objective = BlendObjective {
        shape,
        graph: g,
        raw_pos: data.raw_positions.view(),
        raw_feat: data.raw_features.view(),
        labels: &data.labels,
        subset: &data.splits.train,
        method: cfg.method,
        tau: cfg.tau,
        t_end: cfg.t_end,
    };
    let mut theta = params0.values.clone();
    let mut best_theta = theta.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let train_loss = objective.eval::<f64>(&theta);
        let grad = gradient(&objective, &theta, cfg.grad_mode)?;
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.lr * g;
        }
        if theta[alpha_idx] < 0.0 {
            theta[alpha_idx] = 0.0;
        }
        let logits = forward_logits::<f64>(
            shape,
            &theta,
            g,
            data.raw_positions.view(),
            data.raw_features.view(),
            cfg.method,
            cfg.tau,
            cfg.t_end,
        );
        let val_accuracy =
            accuracy_from_logits(&logits, shape.classes, &data.labels, &data.splits.val);
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_accuracy,
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best_theta = theta.clone();
        }
    }
    if metrics.is_empty() {
        best_theta = theta;
    }
    Ok((
        ModelParams {
            shape: shape.clone(),
            values: best_theta,
        },
        metrics,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitAccuracy {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// Argmax-logit accuracy of a trained model on every split, using the same
/// fixed-step forward as training.
pub fn evaluate(g: &Graph, data: &DataSet, params: &ModelParams, cfg: &TrainConfig) -> Result<SplitAccuracy> {
    cfg.validate()?;
    check_inputs(&params.shape, data.raw_positions.view(), data.raw_features.view())?;
    let logits = forward_logits::<f64>(
        &params.shape,
        &params.values,
        g,
        data.raw_positions.view(),
        data.raw_features.view(),
        cfg.method,
        cfg.tau,
        cfg.t_end,
    );
    let acc = |subset: &[usize]| {
        accuracy_from_logits(&logits, params.shape.classes, &data.labels, subset)
    };
    Ok(SplitAccuracy {
        train: acc(&data.splits.train),
        val: acc(&data.splits.val),
        test: acc(&data.splits.test),
    })
}

/// Forward pass through the solver stack (any method, any rewiring):
/// encode, rewire per policy, integrate, decode. `t_end = 0` decodes the
/// initial state.
pub fn forward(
    g: &Graph,
    raw_pos: ArrayView2<f64>,
    raw_feat: ArrayView2<f64>,
    params: &ModelParams,
    solver_cfg: &SolverConfig,
    policy: &RewiringPolicy,
    metric: &MetricSpace,
) -> Result<Array2<f64>> {
    let state = params.encode(raw_pos, raw_feat)?;
    if solver_cfg.t_end == 0.0 {
        return Ok(params.decode(&state));
    }
    // the supplied graph is the base stencil regardless of what the policy
    // was built with
    let policy = RewiringPolicy {
        mode: policy.mode,
        base: g.clone(),
    };
    let mut field = BeltramiFlow::new(policy, *metric, params.diffusivity(), raw_pos)?;
    let trajectory = solvers::integrate(&state, solver_cfg, &mut field)?;
    Ok(params.decode(trajectory.states.last().expect("trajectory never empty")))
}

/// Evaluation-time forward with a flexible terminal time: integrates with
/// the configured solver, scoring validation accuracy at every accepted
/// step, and decodes the best snapshot.
#[allow(clippy::too_many_arguments)]
pub fn forward_with_patience(
    raw_pos: ArrayView2<f64>,
    raw_feat: ArrayView2<f64>,
    params: &ModelParams,
    solver_cfg: &SolverConfig,
    policy: &RewiringPolicy,
    metric: &MetricSpace,
    labels: &[i64],
    val_subset: &[usize],
) -> Result<(Array2<f64>, f64)> {
    let state = params.encode(raw_pos, raw_feat)?;
    let mut field = BeltramiFlow::new(policy.clone(), *metric, params.diffusivity(), raw_pos)?;
    let validator = |s: &JointState| {
        let logits = params.decode(s);
        accuracy_from_logits(
            logits.as_slice().expect("standard layout"),
            params.shape.classes,
            labels,
            val_subset,
        )
    };
    let (best, t) = solvers::infer_with_patience(&state, solver_cfg, &mut field, validator)?;
    Ok((params.decode(&best), t))
}
