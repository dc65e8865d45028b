//! Temporal discretization of a flow on a [`JointState`].
//!
//! Fixed-step explicit Euler and classical RK4 walk to the terminal time
//! with a shortened final step; Dormand-Prince 5(4) adapts its step from
//! the embedded fourth-order error estimate. The rewiring hook of the
//! vector field fires once per accepted step, never inside trial stages,
//! so each error estimate is taken on a frozen stencil.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::JointState;

/// Time derivative of both coordinate blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDeriv {
    pub d_positions: Array2<f64>,
    pub d_features: Array2<f64>,
}

impl StateDeriv {
    pub fn zeros_like(state: &JointState) -> Self {
        Self {
            d_positions: Array2::zeros(state.positions.dim()),
            d_features: Array2::zeros(state.features.dim()),
        }
    }
}

/// A vector field over joint states plus an optional per-accepted-step
/// hook (used for stencil rewiring cadences).
pub trait FlowField {
    fn rhs(&self, state: &JointState) -> Result<StateDeriv>;

    fn on_accepted_step(&mut self, _state: &JointState) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum SolverMethod {
    Euler,
    Rk4,
    Dopri5,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Fixed step size (Euler/RK4).
    pub tau: f64,
    /// Terminal time.
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Bound on total step attempts, accepted or rejected.
    pub max_steps: usize,
    /// Consecutive non-improving validator evaluations tolerated by
    /// [`infer_with_patience`].
    pub patience: Option<usize>,
    /// Record every k-th accepted state (the initial and final states are
    /// always kept).
    pub snapshot_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Dopri5,
            tau: 0.1,
            t_end: 1.0,
            rtol: 1e-6,
            atol: 1e-8,
            max_steps: 100_000,
            patience: None,
            snapshot_every: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.t_end <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "terminal time must be positive, got {}",
                self.t_end
            )));
        }
        if self.rtol <= 0.0 || self.atol <= 0.0 {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if self.max_steps < 1 {
            return Err(Error::InvalidParameter("max_steps must be >= 1".into()));
        }
        if self.snapshot_every < 1 {
            return Err(Error::InvalidParameter("snapshot_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evaluations: usize,
    /// Scaled error estimate of each accepted adaptive step (all <= 1).
    pub accepted_errors: Vec<f64>,
}

/// Accepted time points and state snapshots of one integration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<JointState>,
    pub stats: SolveStats,
}

/// One explicit Euler update `z + tau * rhs(z)`.
pub fn euler_step<F: FlowField>(state: &JointState, tau: f64, field: &F) -> Result<JointState> {
    if tau <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let d = field.rhs(state)?;
    let next = state.add_scaled(tau, &d);
    if !next.all_finite() {
        return Err(Error::BlowUp {
            t: tau,
            step: 0,
            partial: None,
        });
    }
    Ok(next)
}

/// Fixed-step schedule reaching `t_end`: full steps of `tau` and a final
/// shortened step. Empty when `t_end <= 0`.
pub fn fixed_step_sizes(tau: f64, t_end: f64) -> Vec<f64> {
    let mut sizes = Vec::new();
    let tiny = 1e-12 * t_end.abs().max(1.0);
    let mut t = 0.0;
    let mut k = 0usize;
    while t < t_end - tiny {
        let t_next = ((k + 1) as f64 * tau).min(t_end);
        sizes.push(t_next - t);
        t = t_next;
        k += 1;
    }
    sizes
}

// Dormand-Prince 5(4) tableau. The flow is autonomous, so the stage
// abscissae are not needed.
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (the propagated solution).
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Difference between the fifth- and embedded fourth-order weights.
const DP_ERR: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn combine(base: &JointState, h: f64, coeffs: &[f64], stages: &[StateDeriv]) -> JointState {
    let mut positions = base.positions.clone();
    let mut features = base.features.clone();
    for (c, k) in coeffs.iter().zip(stages) {
        if *c == 0.0 {
            continue;
        }
        positions.scaled_add(h * c, &k.d_positions);
        features.scaled_add(h * c, &k.d_features);
    }
    JointState {
        positions,
        features,
        alpha: base.alpha,
    }
}

/// Scaled error estimate of a trial step: the max over entries of
/// `|z5 - z4| / (atol + rtol * max(|z|, |z5|))`. Non-finite trials map to
/// infinity so they are rejected.
fn error_estimate(old: &JointState, new: &JointState, err: &JointState, rtol: f64, atol: f64) -> f64 {
    let mut worst = 0.0f64;
    let blocks = [
        (&old.positions, &new.positions, &err.positions),
        (&old.features, &new.features, &err.features),
    ];
    for (o, n, e) in blocks {
        for ((&ov, &nv), &ev) in o.iter().zip(n.iter()).zip(e.iter()) {
            let scale = atol + rtol * ov.abs().max(nv.abs());
            let r = ev.abs() / scale;
            if !r.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(r);
        }
    }
    worst
}

enum StepOutcome {
    Accepted { t: f64 },
    Rejected,
}

/// Shared stepping engine driven by both [`integrate`] and
/// [`infer_with_patience`]. `t_limit = None` lets adaptive and fixed
/// schedules run open-ended.
struct Run<'a, F: FlowField> {
    field: &'a mut F,
    cfg: &'a SolverConfig,
    t: f64,
    state: JointState,
    h: f64,
    fixed_index: usize,
    attempts: usize,
    stats: SolveStats,
}

impl<'a, F: FlowField> Run<'a, F> {
    fn new(field: &'a mut F, cfg: &'a SolverConfig, initial: JointState) -> Self {
        let h0 = match cfg.method {
            SolverMethod::Dopri5 => (cfg.t_end / 10.0).min(0.1),
            _ => cfg.tau,
        };
        Self {
            field,
            cfg,
            t: 0.0,
            state: initial,
            h: h0,
            fixed_index: 0,
            attempts: 0,
            stats: SolveStats::default(),
        }
    }

    fn reached(&self, t_limit: Option<f64>) -> bool {
        match t_limit {
            Some(t_end) => self.t >= t_end - 1e-12 * t_end.abs().max(1.0),
            None => false,
        }
    }

    fn blow_up(&self, partial: Option<Box<Trajectory>>) -> Error {
        Error::BlowUp {
            t: self.t,
            step: self.attempts,
            partial,
        }
    }

    /// Attempts one step. Accepted steps advance `t`, fire the field hook,
    /// and report the scaled error estimate (0 for fixed-step methods).
    fn attempt(&mut self, t_limit: Option<f64>) -> Result<StepOutcome> {
        self.attempts += 1;
        match self.cfg.method {
            SolverMethod::Euler | SolverMethod::Rk4 => {
                let t_next = match t_limit {
                    Some(t_end) => ((self.fixed_index + 1) as f64 * self.cfg.tau).min(t_end),
                    None => (self.fixed_index + 1) as f64 * self.cfg.tau,
                };
                let h = t_next - self.t;
                let next = match self.cfg.method {
                    SolverMethod::Euler => {
                        let k1 = self.field.rhs(&self.state)?;
                        self.stats.rhs_evaluations += 1;
                        self.state.add_scaled(h, &k1)
                    }
                    _ => {
                        let k1 = self.field.rhs(&self.state)?;
                        let k2 = self.field.rhs(&self.state.add_scaled(h / 2.0, &k1))?;
                        let k3 = self.field.rhs(&self.state.add_scaled(h / 2.0, &k2))?;
                        let k4 = self.field.rhs(&self.state.add_scaled(h, &k3))?;
                        self.stats.rhs_evaluations += 4;
                        combine(
                            &self.state,
                            h / 6.0,
                            &[1.0, 2.0, 2.0, 1.0],
                            &[k1, k2, k3, k4],
                        )
                    }
                };
                if !next.all_finite() {
                    return Err(self.blow_up(None));
                }
                self.state = next;
                self.t = t_next;
                self.fixed_index += 1;
                self.stats.accepted += 1;
                self.field.on_accepted_step(&self.state)?;
                Ok(StepOutcome::Accepted { t: self.t })
            }
            SolverMethod::Dopri5 => {
                let mut h = self.h;
                if let Some(t_end) = t_limit {
                    h = h.min(t_end - self.t);
                }
                if h < 1e-12 * self.t.abs().max(1.0) {
                    return Err(self.blow_up(None));
                }
                let mut stages: Vec<StateDeriv> = Vec::with_capacity(7);
                for s in 0..7 {
                    let trial = combine(&self.state, h, &DP_A[s][..s.min(6)], &stages[..s.min(6)]);
                    if !trial.all_finite() {
                        // treat as an infinite error estimate: reject and shrink
                        self.stats.rejected += 1;
                        self.stats.rhs_evaluations += s;
                        self.h = h * 0.2;
                        return Ok(StepOutcome::Rejected);
                    }
                    stages.push(self.field.rhs(&trial)?);
                }
                self.stats.rhs_evaluations += 7;
                let proposal = combine(&self.state, h, &DP_B5, &stages);
                let err_state = combine(
                    &JointState {
                        positions: Array2::zeros(self.state.positions.dim()),
                        features: Array2::zeros(self.state.features.dim()),
                        alpha: self.state.alpha,
                    },
                    h,
                    &DP_ERR,
                    &stages,
                );
                let err = if proposal.all_finite() {
                    error_estimate(&self.state, &proposal, &err_state, self.cfg.rtol, self.cfg.atol)
                } else {
                    f64::INFINITY
                };
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if err <= 1.0 {
                    self.t += h;
                    self.state = proposal;
                    self.h = h * factor;
                    self.stats.accepted += 1;
                    self.stats.accepted_errors.push(err);
                    self.field.on_accepted_step(&self.state)?;
                    Ok(StepOutcome::Accepted { t: self.t })
                } else {
                    self.h = h * factor;
                    self.stats.rejected += 1;
                    Ok(StepOutcome::Rejected)
                }
            }
        }
    }
}

/// Integrates from t = 0 to `cfg.t_end`, recording snapshots at the
/// configured cadence (the initial and final states are always included).
pub fn integrate<F: FlowField>(
    initial: &JointState,
    cfg: &SolverConfig,
    field: &mut F,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut run = Run::new(field, cfg, initial.clone());
    let mut times = vec![0.0];
    let mut states = vec![initial.clone()];
    let t_end = Some(cfg.t_end);
    while !run.reached(t_end) {
        if run.attempts >= cfg.max_steps {
            if *times.last().unwrap() < run.t {
                times.push(run.t);
                states.push(run.state.clone());
            }
            return Err(Error::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t: run.t,
                partial: Box::new(Trajectory {
                    times,
                    states,
                    stats: run.stats,
                }),
            });
        }
        match run.attempt(t_end) {
            Ok(StepOutcome::Accepted { t }) => {
                let take = run.stats.accepted.is_multiple_of(cfg.snapshot_every) || run.reached(t_end);
                if take {
                    times.push(t);
                    states.push(run.state.clone());
                }
            }
            Ok(StepOutcome::Rejected) => {}
            Err(Error::BlowUp { t, step, .. }) => {
                return Err(Error::BlowUp {
                    t,
                    step,
                    partial: Some(Box::new(Trajectory {
                        times,
                        states,
                        stats: run.stats,
                    })),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trajectory {
        times,
        states,
        stats: run.stats,
    })
}

/// Integrates with a flexible horizon: the validator scores the initial
/// state and every accepted step; integration stops after `cfg.patience`
/// consecutive non-improving evaluations or `cfg.max_steps` attempts, and
/// the best-scoring snapshot is returned with its time.
pub fn infer_with_patience<F, V>(
    initial: &JointState,
    cfg: &SolverConfig,
    field: &mut F,
    validator: V,
) -> Result<(JointState, f64)>
where
    F: FlowField,
    V: Fn(&JointState) -> f64,
{
    cfg.validate()?;
    let patience = cfg.patience.ok_or_else(|| {
        Error::InvalidParameter("patience must be set for patience-based inference".into())
    })?;
    if patience < 1 {
        return Err(Error::InvalidParameter("patience must be >= 1".into()));
    }
    let mut run = Run::new(field, cfg, initial.clone());
    let mut best_state = initial.clone();
    let mut best_time = 0.0;
    let mut best_score = validator(initial);
    let mut stale = 0usize;
    while run.attempts < cfg.max_steps {
        match run.attempt(None)? {
            StepOutcome::Accepted { t } => {
                let score = validator(&run.state);
                if score > best_score {
                    best_score = score;
                    best_state = run.state.clone();
                    best_time = t;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        break;
                    }
                }
            }
            StepOutcome::Rejected => {}
        }
    }
    Ok((best_state, best_time))
}
