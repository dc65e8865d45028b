//! Run settings: defaults, flat config-file keys, and flag overrides.
//!
//! Every knob has a config-file key; the subcommand flags override file
//! values, and `--set KEY=VALUE` reaches any key without a dedicated flag.

use std::path::{Path, PathBuf};

use beltrami::diffusivity::{ExpKernelParams, Kernel, Normalizer};
use beltrami::flow::{RewiringMode, RewiringPolicy};
use beltrami::graph::Graph;
use beltrami::learning::GradMode;
use beltrami::metric::{MetricKind, MetricSpace};
use beltrami::positional::{PprConfig, PprMode};
use beltrami::solvers::{SolverConfig, SolverMethod};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionalSource {
    Ppr,
    Poincare,
    File,
    None,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    // data
    pub graph: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub lcc: bool,
    // positional encoding
    pub positional: PositionalSource,
    pub positional_file: Option<PathBuf>,
    pub ppr_beta: f64,
    pub ppr_mode: PprMode,
    pub ppr_topk: Option<usize>,
    pub poincare_dim: usize,
    pub poincare_epochs: usize,
    pub poincare_lr: f64,
    pub poincare_negatives: usize,
    // metric for rewiring distances
    pub metric: MetricKind,
    // diffusivity
    pub kernel: Kernel,
    pub normalizer: Normalizer,
    pub d_k: usize,
    pub exp_kernel: ExpKernelParams,
    pub alpha: f64,
    // rewiring
    pub rewiring: String,
    pub k: usize,
    pub refresh_every: usize,
    pub radius: f64,
    // solver
    pub method: SolverMethod,
    pub tau: f64,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub patience: Option<usize>,
    pub snapshot_every: usize,
    // training
    pub d_pos: usize,
    pub d_feat: usize,
    pub lr: f64,
    pub epochs: usize,
    pub grad_mode: GradMode,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub train_nodes: Option<PathBuf>,
    pub val_nodes: Option<PathBuf>,
    pub params: Option<PathBuf>,
    // misc
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub freeze_weights: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            graph: None,
            features: None,
            labels: None,
            lcc: false,
            positional: PositionalSource::None,
            positional_file: None,
            ppr_beta: 0.85,
            ppr_mode: PprMode::Series {
                max_terms: 1000,
                tol: 1e-13,
            },
            ppr_topk: None,
            poincare_dim: 2,
            poincare_epochs: 300,
            poincare_lr: 0.05,
            poincare_negatives: 5,
            metric: MetricKind::Euclidean,
            kernel: Kernel::ScaledDot,
            normalizer: Normalizer::Softmax,
            d_k: 4,
            exp_kernel: ExpKernelParams::default(),
            alpha: 1.0,
            rewiring: "fixed".into(),
            k: 4,
            refresh_every: 10,
            radius: 1.0,
            method: SolverMethod::Euler,
            tau: 0.5,
            t_end: 3.0,
            rtol: 1e-6,
            atol: 1e-8,
            max_steps: 100_000,
            patience: None,
            snapshot_every: 1,
            d_pos: 2,
            d_feat: 8,
            lr: 0.5,
            epochs: 150,
            grad_mode: GradMode::UnrolledReverse,
            train_per_class: 4,
            val_per_class: 4,
            train_nodes: None,
            val_nodes: None,
            params: None,
            seed: 0,
            out: None,
            freeze_weights: false,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| usage(format!("bad value for `{key}`: {e}")))
}

impl RunSettings {
    /// Applies a single `key = value` pair; unknown keys are usage errors.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "graph" => self.graph = Some(PathBuf::from(value)),
            "features" => self.features = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "lcc" => self.lcc = parse(key, value)?,
            "positional" => {
                self.positional = match value {
                    "ppr" => PositionalSource::Ppr,
                    "poincare" => PositionalSource::Poincare,
                    "file" => PositionalSource::File,
                    "none" => PositionalSource::None,
                    other => return Err(usage(format!("unknown positional source `{other}`"))),
                }
            }
            "positional_file" => self.positional_file = Some(PathBuf::from(value)),
            "ppr_beta" => self.ppr_beta = parse(key, value)?,
            "ppr_mode" => {
                self.ppr_mode = match value {
                    "series" => PprMode::Series {
                        max_terms: 1000,
                        tol: 1e-13,
                    },
                    "linear_solve" => PprMode::LinearSolve,
                    other => return Err(usage(format!("unknown ppr mode `{other}`"))),
                }
            }
            "ppr_tol" => {
                let tol = parse(key, value)?;
                self.ppr_mode = match self.ppr_mode {
                    PprMode::Series { max_terms, .. } => PprMode::Series { max_terms, tol },
                    PprMode::LinearSolve => PprMode::Series {
                        max_terms: 1000,
                        tol,
                    },
                }
            }
            "ppr_max_terms" => {
                let max_terms = parse(key, value)?;
                self.ppr_mode = match self.ppr_mode {
                    PprMode::Series { tol, .. } => PprMode::Series { max_terms, tol },
                    PprMode::LinearSolve => PprMode::Series {
                        max_terms,
                        tol: 1e-13,
                    },
                }
            }
            "ppr_topk" => self.ppr_topk = Some(parse(key, value)?),
            "poincare_dim" => self.poincare_dim = parse(key, value)?,
            "poincare_epochs" => self.poincare_epochs = parse(key, value)?,
            "poincare_lr" => self.poincare_lr = parse(key, value)?,
            "poincare_negatives" => self.poincare_negatives = parse(key, value)?,
            "metric" => {
                self.metric = match value {
                    "euclidean" => MetricKind::Euclidean,
                    "poincare_ball" => MetricKind::PoincareBall,
                    other => return Err(usage(format!("unknown metric `{other}`"))),
                }
            }
            "kernel" => {
                self.kernel = match value {
                    "scaled_dot" => Kernel::ScaledDot,
                    "cosine_sim" => Kernel::CosineSim,
                    "pearson" => Kernel::Pearson,
                    "exp_kernel" => Kernel::ExpKernel,
                    other => return Err(usage(format!("unknown kernel `{other}`"))),
                }
            }
            "normalizer" => {
                self.normalizer = match value {
                    "softmax" => Normalizer::Softmax,
                    "squareplus" => Normalizer::Squareplus,
                    other => return Err(usage(format!("unknown normalizer `{other}`"))),
                }
            }
            "d_k" => self.d_k = parse(key, value)?,
            "sigma_u" => self.exp_kernel.sigma_pos = parse(key, value)?,
            "sigma_x" => self.exp_kernel.sigma_feat = parse(key, value)?,
            "ell_u" => self.exp_kernel.length_pos = parse(key, value)?,
            "ell_x" => self.exp_kernel.length_feat = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "rewiring" => match value {
                "fixed" | "knn_precomputed" | "knn_adaptive" | "radius" => {
                    self.rewiring = value.to_string()
                }
                other => return Err(usage(format!("unknown rewiring mode `{other}`"))),
            },
            "k" => self.k = parse(key, value)?,
            "refresh_every" => self.refresh_every = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "method" => {
                self.method = match value {
                    "euler" => SolverMethod::Euler,
                    "rk4" => SolverMethod::Rk4,
                    "dopri5" => SolverMethod::Dopri5,
                    other => return Err(usage(format!("unknown method `{other}`"))),
                }
            }
            "tau" => self.tau = parse(key, value)?,
            "t_end" => self.t_end = parse(key, value)?,
            "rtol" => self.rtol = parse(key, value)?,
            "atol" => self.atol = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "patience" => self.patience = Some(parse(key, value)?),
            "snapshot_every" => self.snapshot_every = parse(key, value)?,
            "d_pos" => self.d_pos = parse(key, value)?,
            "d_feat" => self.d_feat = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "grad_mode" => {
                self.grad_mode = match value {
                    "unrolled_reverse" => GradMode::UnrolledReverse,
                    "finite_difference" => GradMode::FiniteDifference { h: 1e-5 },
                    other => return Err(usage(format!("unknown grad mode `{other}`"))),
                }
            }
            "fd_h" => {
                let h = parse(key, value)?;
                self.grad_mode = GradMode::FiniteDifference { h };
            }
            "train_per_class" => self.train_per_class = parse(key, value)?,
            "val_per_class" => self.val_per_class = parse(key, value)?,
            "train_nodes" => self.train_nodes = Some(PathBuf::from(value)),
            "val_nodes" => self.val_nodes = Some(PathBuf::from(value)),
            "params" => self.params = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "freeze_weights" => self.freeze_weights = parse(key, value)?,
            other => return Err(usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_config_file(&mut self, path: &Path) -> Result<(), CliError> {
        let map = beltrami::io::read_flat_config(path).map_err(CliError::Input)?;
        for (k, v) in &map {
            self.apply_kv(k, v)?;
        }
        Ok(())
    }

    pub fn ppr_config(&self) -> PprConfig {
        PprConfig {
            beta: self.ppr_beta,
            mode: self.ppr_mode,
            topk: self.ppr_topk,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            method: self.method,
            tau: self.tau,
            t_end: self.t_end,
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
            patience: self.patience,
            snapshot_every: self.snapshot_every,
        }
    }

    /// Metric over `dim`-dimensional positional coordinates.
    pub fn metric_space(&self, dim: usize) -> MetricSpace {
        match self.metric {
            MetricKind::Euclidean => MetricSpace::euclidean(dim),
            MetricKind::PoincareBall => MetricSpace::poincare_ball(dim),
        }
    }

    pub fn rewiring_policy(&self, base: Graph) -> Result<RewiringPolicy, CliError> {
        let mode = match self.rewiring.as_str() {
            "fixed" => RewiringMode::Fixed,
            "knn_precomputed" => RewiringMode::PrecomputedKnn { k: self.k },
            "knn_adaptive" => RewiringMode::AdaptiveKnn {
                k: self.k,
                refresh_every: self.refresh_every,
            },
            "radius" => RewiringMode::Radius { r: self.radius },
            other => return Err(usage(format!("unknown rewiring mode `{other}`"))),
        };
        Ok(RewiringPolicy { mode, base })
    }

    pub fn require_graph(&self) -> Result<&PathBuf, CliError> {
        self.graph
            .as_ref()
            .ok_or_else(|| usage("a graph file is required (flag --graph or key `graph`)"))
    }

    pub fn require_features(&self) -> Result<&PathBuf, CliError> {
        self.features
            .as_ref()
            .ok_or_else(|| usage("a features file is required (flag --features or key `features`)"))
    }

    pub fn require_labels(&self) -> Result<&PathBuf, CliError> {
        self.labels
            .as_ref()
            .ok_or_else(|| usage("a labels file is required (flag --labels or key `labels`)"))
    }
}
