//! Metric spaces for positional coordinates.
//!
//! Two geometries are supported: flat `R^d` and the Poincare ball model of
//! hyperbolic space (curvature -1). The ball carries a boundary clamp
//! margin `eps` so that projected points keep the distance formula finite
//! in double precision.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MetricKind {
    Euclidean,
    PoincareBall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSpace {
    pub kind: MetricKind,
    pub dim: usize,
    pub eps: f64,
}

pub const DEFAULT_BALL_EPS: f64 = 1e-5;

impl MetricSpace {
    pub fn euclidean(dim: usize) -> Self {
        Self {
            kind: MetricKind::Euclidean,
            dim,
            eps: DEFAULT_BALL_EPS,
        }
    }

    pub fn poincare_ball(dim: usize) -> Self {
        Self {
            kind: MetricKind::PoincareBall,
            dim,
            eps: DEFAULT_BALL_EPS,
        }
    }

    pub fn poincare_ball_with_eps(dim: usize, eps: f64) -> Result<Self> {
        if eps <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "ball clamp margin must be positive, got {eps}"
            )));
        }
        Ok(Self {
            kind: MetricKind::PoincareBall,
            dim,
            eps,
        })
    }

    fn check_dim(&self, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != self.dim || v.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "points of dim {} and {} in a {}-dimensional space",
                u.len(),
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Distance between two points. Euclidean: `|u - v|`. Ball:
    /// `arcosh(1 + 2|u-v|^2 / ((1-|u|^2)(1-|v|^2)))`; points must lie
    /// strictly inside the unit ball.
    pub fn distance(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_dim(u, v)?;
        match self.kind {
            MetricKind::Euclidean => Ok(sq_dist(u, v).sqrt()),
            MetricKind::PoincareBall => {
                let nu = norm_sq(u);
                let nv = norm_sq(v);
                if nu >= 1.0 {
                    return Err(Error::OutsideBall { norm: nu.sqrt() });
                }
                if nv >= 1.0 {
                    return Err(Error::OutsideBall { norm: nv.sqrt() });
                }
                let arg = 1.0 + 2.0 * sq_dist(u, v) / ((1.0 - nu) * (1.0 - nv));
                Ok(arg.max(1.0).acosh())
            }
        }
    }

    /// Clamps a point back into the representable region: identity for
    /// Euclidean space; in the ball, rescales to norm `1 - eps` whenever the
    /// norm exceeds it.
    pub fn project(&self, u: &mut [f64]) {
        if self.kind == MetricKind::Euclidean {
            return;
        }
        let limit = 1.0 - self.eps;
        let norm = norm_sq(u).sqrt();
        if norm > limit {
            let s = limit / norm;
            for x in u.iter_mut() {
                *x *= s;
            }
        }
    }

    /// Converts a Euclidean gradient at `u` into the steepest-descent
    /// direction of the space: identity for Euclidean, inverse conformal
    /// factor `((1 - |u|^2)^2 / 4) * g` in the ball.
    pub fn riemannian_scale(&self, u: &[f64], g: &[f64]) -> Vec<f64> {
        match self.kind {
            MetricKind::Euclidean => g.to_vec(),
            MetricKind::PoincareBall => {
                let f = (1.0 - norm_sq(u)).powi(2) / 4.0;
                g.iter().map(|&x| f * x).collect()
            }
        }
    }
}

#[inline]
pub(crate) fn norm_sq(u: &[f64]) -> f64 {
    u.iter().map(|&x| x * x).sum()
}

#[inline]
pub(crate) fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum()
}

/// Analytic gradient of the ball distance with respect to both endpoints.
/// Returns zero vectors when the points coincide (the distance is at its
/// minimum and one-sided derivatives cancel in the training updates).
pub(crate) fn poincare_distance_grad(u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = 1.0 - norm_sq(u);
    let b = 1.0 - norm_sq(v);
    let delta = sq_dist(u, v);
    let gamma = 1.0 + 2.0 * delta / (a * b);
    let denom = (gamma * gamma - 1.0).sqrt();
    if denom < 1e-14 {
        return (vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let cu = 4.0 / (a * b * denom);
    let cv = cu;
    let gu = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| cu * ((ui - vi) + (delta / a) * ui))
        .collect();
    let gv = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| cv * ((vi - ui) + (delta / b) * vi))
        .collect();
    (gu, gv)
}
