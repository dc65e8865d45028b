//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use beltrami::diffusivity::DiffusivityParams;
use beltrami::flow::{BeltramiFlow, FrozenFlow, JointState, RewiringMode};
use beltrami::graph::Graph;
use beltrami::io;
use beltrami::learning::{
    self, evaluate, generate_splits, train, DataSet, ModelParams, ModelShape, NodeSplits,
    TrainConfig,
};
use beltrami::metric::MetricSpace;
use beltrami::positional::{poincare_embed, ppr_encode, HypEmbedConfig};
use beltrami::solvers::{self, SolveStats, Trajectory};
use ndarray::Array2;
use serde::Serialize;

use crate::config::{PositionalSource, RunSettings};
use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Graph plus row-aligned node data after the optional restriction to the
/// largest connected component.
struct LoadedGraph {
    graph: Graph,
    kept: Option<Vec<Option<usize>>>,
}

fn load_graph(settings: &RunSettings) -> Result<LoadedGraph, CliError> {
    let path = settings.require_graph()?;
    let graph = io::read_graph(path).map_err(CliError::Input)?;
    if settings.lcc {
        let (sub, map) = graph.largest_connected_component();
        Ok(LoadedGraph {
            graph: sub,
            kept: Some(map),
        })
    } else {
        Ok(LoadedGraph { graph, kept: None })
    }
}

fn restrict_rows(m: Array2<f64>, kept: &Option<Vec<Option<usize>>>, what: &str, n: usize) -> Result<Array2<f64>, CliError> {
    let m = match kept {
        None => m,
        Some(map) => {
            if m.nrows() != map.len() {
                return Err(usage(format!(
                    "{what} has {} rows but the input graph has {} nodes",
                    m.nrows(),
                    map.len()
                )));
            }
            let rows: Vec<usize> = (0..map.len()).filter(|&i| map[i].is_some()).collect();
            let mut out = Array2::zeros((rows.len(), m.ncols()));
            for (new, &old) in rows.iter().enumerate() {
                out.row_mut(new).assign(&m.row(old));
            }
            out
        }
    };
    if m.nrows() != n {
        return Err(usage(format!(
            "{what} has {} rows but the graph has {n} nodes",
            m.nrows()
        )));
    }
    Ok(m)
}

fn restrict_labels(labels: Vec<i64>, kept: &Option<Vec<Option<usize>>>, n: usize) -> Result<Vec<i64>, CliError> {
    let labels = match kept {
        None => labels,
        Some(map) => {
            if labels.len() != map.len() {
                return Err(usage(format!(
                    "labels file has {} entries but the input graph has {} nodes",
                    labels.len(),
                    map.len()
                )));
            }
            (0..map.len())
                .filter(|&i| map[i].is_some())
                .map(|i| labels[i])
                .collect()
        }
    };
    if labels.len() != n {
        return Err(usage(format!(
            "labels cover {} nodes but the graph has {n}",
            labels.len()
        )));
    }
    Ok(labels)
}

/// Positional coordinates per the configured source; `n x 0` for `none`.
fn resolve_positions(settings: &RunSettings, g: &Graph) -> Result<Array2<f64>, CliError> {
    match settings.positional {
        PositionalSource::None => Ok(Array2::zeros((g.n(), 0))),
        PositionalSource::Ppr => ppr_encode(g, &settings.ppr_config()).map_err(CliError::Numerical),
        PositionalSource::Poincare => {
            let m = MetricSpace::poincare_ball(settings.poincare_dim);
            let cfg = HypEmbedConfig {
                dim: settings.poincare_dim,
                epochs: settings.poincare_epochs,
                lr: settings.poincare_lr,
                negatives_per_edge: settings.poincare_negatives,
                seed: settings.seed,
            };
            poincare_embed(g, &m, &cfg).map_err(CliError::Numerical)
        }
        PositionalSource::File => {
            let path = settings
                .positional_file
                .as_ref()
                .ok_or_else(|| usage("positional = file requires `positional_file`"))?;
            let m = io::read_matrix(path).map_err(CliError::Input)?;
            if m.nrows() != g.n() {
                return Err(usage(format!(
                    "positional file has {} rows but the graph has {} nodes",
                    m.nrows(),
                    g.n()
                )));
            }
            Ok(m)
        }
    }
}

fn out_dir(settings: &RunSettings, default: &str) -> Result<PathBuf, CliError> {
    let dir = settings
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Input(e.into()))?;
    Ok(dir)
}

pub fn cmd_encode(settings: &RunSettings) -> Result<(), CliError> {
    match settings.positional {
        PositionalSource::Ppr | PositionalSource::Poincare => {}
        _ => return Err(usage("nothing to encode (positional must be ppr or poincare)")),
    }
    let loaded = load_graph(settings)?;
    let started = Instant::now();
    let positions = resolve_positions(settings, &loaded.graph)?;
    let elapsed = started.elapsed();
    let out = settings
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("positional.txt"));
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Input(e.into()))?;
        }
    }
    io::write_matrix(&positions, &out).map_err(CliError::Input)?;
    println!(
        "encoded positions: n = {}, d' = {}, wrote {} in {:.1} ms",
        positions.nrows(),
        positions.ncols(),
        out.display(),
        elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

#[derive(Serialize)]
struct DiffusionDump<'a> {
    times: &'a [f64],
    snapshots: Vec<String>,
    stats: &'a SolveStats,
    complete: bool,
}

fn write_trajectory(dir: &Path, traj: &Trajectory, complete: bool) -> Result<(), CliError> {
    let mut snapshots = Vec::with_capacity(traj.states.len());
    for (idx, state) in traj.states.iter().enumerate() {
        let name = format!("snapshot_{idx:04}.csv");
        let mut text = String::from("node");
        for c in 0..state.pos_dim() {
            write!(text, ",u{c}").expect("string write");
        }
        for c in 0..state.feat_dim() {
            write!(text, ",x{c}").expect("string write");
        }
        text.push('\n');
        for i in 0..state.n() {
            write!(text, "{i}").expect("string write");
            for c in 0..state.pos_dim() {
                write!(text, ",{:.16e}", state.positions[[i, c]]).expect("string write");
            }
            for c in 0..state.feat_dim() {
                write!(text, ",{:.16e}", state.features[[i, c]]).expect("string write");
            }
            text.push('\n');
        }
        std::fs::write(dir.join(&name), text).map_err(|e| CliError::Input(e.into()))?;
        snapshots.push(name);
    }
    let dump = DiffusionDump {
        times: &traj.times,
        snapshots,
        stats: &traj.stats,
        complete,
    };
    let json = serde_json::to_string_pretty(&dump).expect("serializable");
    std::fs::write(dir.join("stats.json"), json + "\n").map_err(|e| CliError::Input(e.into()))?;
    Ok(())
}

pub fn cmd_diffuse(settings: &RunSettings) -> Result<(), CliError> {
    let loaded = load_graph(settings)?;
    let g = &loaded.graph;
    let features = io::read_matrix(settings.require_features()?).map_err(CliError::Input)?;
    let features = restrict_rows(features, &loaded.kept, "features file", g.n())?;
    let positions = resolve_positions(settings, g)?;
    let state = JointState::new(positions.clone(), features, settings.alpha)
        .map_err(CliError::Input)?;
    let params = DiffusivityParams {
        exp_kernel: settings.exp_kernel,
        ..DiffusivityParams::constant_init(
            settings.kernel,
            settings.normalizer,
            settings.d_k,
            state.pos_dim(),
            state.feat_dim(),
        )
    };
    let policy = settings.rewiring_policy(g.clone())?;
    let metric = settings.metric_space(state.pos_dim());
    let dir = out_dir(settings, "diffuse_out")?;
    let cfg = settings.solver_config();

    let result = if settings.freeze_weights {
        let flow = BeltramiFlow::new(policy, metric, params, positions.view())
            .map_err(CliError::Numerical)?;
        let weights = flow.weights(&state).map_err(CliError::Numerical)?;
        let mut frozen = FrozenFlow {
            graph: flow.current_graph().clone(),
            weights,
        };
        solvers::integrate(&state, &cfg, &mut frozen)
    } else {
        let mut flow = BeltramiFlow::new(policy, metric, params, positions.view())
            .map_err(CliError::Numerical)?;
        solvers::integrate(&state, &cfg, &mut flow)
    };

    match result {
        Ok(traj) => {
            write_trajectory(&dir, &traj, true)?;
            println!(
                "diffused to t = {:.6} ({} accepted / {} rejected steps, {} rhs evaluations); wrote {}",
                traj.times.last().unwrap(),
                traj.stats.accepted,
                traj.stats.rejected,
                traj.stats.rhs_evaluations,
                dir.display()
            );
            Ok(())
        }
        Err(e) => {
            let partial = match &e {
                beltrami::Error::BlowUp { partial, .. } => partial.as_deref(),
                beltrami::Error::MaxStepsExceeded { partial, .. } => Some(partial.as_ref()),
                _ => None,
            };
            if let Some(traj) = partial {
                write_trajectory(&dir, traj, false)?;
                eprintln!("solver failed ({e}); partial dump in {}", dir.display());
            }
            Err(CliError::Numerical(e))
        }
    }
}

struct TrainInputs {
    graph: Graph,
    diffusion_graph: Graph,
    data: DataSet,
    shape: ModelShape,
}

fn prepare_training(settings: &RunSettings) -> Result<TrainInputs, CliError> {
    let loaded = load_graph(settings)?;
    let g = loaded.graph.clone();
    let features = io::read_matrix(settings.require_features()?).map_err(CliError::Input)?;
    let features = restrict_rows(features, &loaded.kept, "features file", g.n())?;
    let labels = io::read_labels(settings.require_labels()?).map_err(CliError::Input)?;
    let labels = restrict_labels(labels, &loaded.kept, g.n())?;
    let positions = resolve_positions(settings, &g)?;

    let splits = match (&settings.train_nodes, &settings.val_nodes) {
        (Some(train_path), Some(val_path)) => {
            let train = io::read_node_list(train_path).map_err(CliError::Input)?;
            let val = io::read_node_list(val_path).map_err(CliError::Input)?;
            let mut in_split = vec![false; g.n()];
            for &i in train.iter().chain(&val) {
                if i < g.n() {
                    in_split[i] = true;
                }
            }
            let test = (0..g.n())
                .filter(|&i| !in_split[i] && labels[i] >= 0)
                .collect();
            NodeSplits { train, val, test }
        }
        (None, None) => generate_splits(
            &labels,
            settings.train_per_class,
            settings.val_per_class,
            settings.seed,
        )
        .map_err(CliError::Input)?,
        _ => return Err(usage("provide both train_nodes and val_nodes, or neither")),
    };

    let classes = labels.iter().copied().max().unwrap_or(-1) + 1;
    if classes < 2 {
        return Err(usage("need at least two labeled classes"));
    }
    let pos_dim = if settings.positional == PositionalSource::None {
        0
    } else {
        settings.d_pos
    };
    let shape = ModelShape {
        raw_pos_dim: positions.ncols(),
        raw_feat_dim: features.ncols(),
        pos_dim,
        feat_dim: settings.d_feat,
        key_dim: settings.d_k,
        classes: classes as usize,
        kernel: settings.kernel,
        normalizer: settings.normalizer,
        exp_kernel: settings.exp_kernel,
    };

    // training always runs on a stencil frozen before the unroll; adaptive
    // rewiring degenerates to the precomputed variant here
    let policy = settings.rewiring_policy(g.clone())?;
    let diffusion_graph = match policy.mode {
        RewiringMode::Fixed => g.clone(),
        _ => beltrami::flow::rewire(&policy, positions.view(), &settings.metric_space(positions.ncols()))
            .map_err(CliError::Numerical)?,
    };

    Ok(TrainInputs {
        graph: g,
        diffusion_graph,
        data: DataSet {
            raw_positions: positions,
            raw_features: features,
            labels,
            splits,
        },
        shape,
    })
}

fn train_config(settings: &RunSettings) -> TrainConfig {
    TrainConfig {
        lr: settings.lr,
        epochs: settings.epochs,
        grad_mode: settings.grad_mode,
        method: settings.method,
        tau: settings.tau,
        t_end: settings.t_end,
    }
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: Option<usize>,
    best_val_accuracy: f64,
    accuracy: learning::SplitAccuracy,
    epochs: usize,
    seed: u64,
}

pub fn cmd_train(settings: &RunSettings) -> Result<(), CliError> {
    let inputs = prepare_training(settings)?;
    let cfg = train_config(settings);
    let params0 =
        ModelParams::init(inputs.shape.clone(), settings.seed).map_err(CliError::Input)?;
    let (best, metrics) =
        train(&inputs.diffusion_graph, &inputs.data, &params0, &cfg).map_err(CliError::Numerical)?;
    let acc = evaluate(&inputs.diffusion_graph, &inputs.data, &best, &cfg)
        .map_err(CliError::Numerical)?;

    let dir = out_dir(settings, "train_out")?;
    let mut jsonl = String::new();
    for m in &metrics {
        jsonl.push_str(&serde_json::to_string(m).expect("serializable"));
        jsonl.push('\n');
    }
    std::fs::write(dir.join("metrics.jsonl"), jsonl).map_err(|e| CliError::Input(e.into()))?;

    let best_epoch = metrics
        .iter()
        .max_by(|a, b| {
            a.val_accuracy
                .partial_cmp(&b.val_accuracy)
                .unwrap()
                .then(b.epoch.cmp(&a.epoch))
        })
        .map(|m| m.epoch);
    let summary = TrainSummary {
        best_epoch,
        best_val_accuracy: metrics
            .iter()
            .map(|m| m.val_accuracy)
            .fold(f64::NEG_INFINITY, f64::max),
        accuracy: acc,
        epochs: metrics.len(),
        seed: settings.seed,
    };
    let summary_json = serde_json::to_string_pretty(&summary).expect("serializable");
    std::fs::write(dir.join("summary.json"), summary_json.clone() + "\n")
        .map_err(|e| CliError::Input(e.into()))?;
    let params_json = serde_json::to_string(&best).expect("serializable");
    std::fs::write(dir.join("params.json"), params_json + "\n")
        .map_err(|e| CliError::Input(e.into()))?;
    let _ = inputs.graph;
    println!("{summary_json}");
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    accuracy: learning::SplitAccuracy,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_time: Option<f64>,
}

pub fn cmd_eval(settings: &RunSettings) -> Result<(), CliError> {
    let inputs = prepare_training(settings)?;
    let params_path = settings
        .params
        .as_ref()
        .ok_or_else(|| usage("eval requires a trained params file (flag --params)"))?;
    let text = std::fs::read_to_string(params_path).map_err(|e| CliError::Input(e.into()))?;
    let params: ModelParams =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad params file: {e}")))?;
    if params.shape != inputs.shape {
        return Err(usage(
            "params file was trained with a different model shape than this configuration",
        ));
    }

    let summary = if settings.patience.is_some() {
        let policy = settings.rewiring_policy(inputs.diffusion_graph.clone())?;
        let metric = settings.metric_space(inputs.data.raw_positions.ncols());
        let (logits, best_time) = learning::forward_with_patience(
            inputs.data.raw_positions.view(),
            inputs.data.raw_features.view(),
            &params,
            &settings.solver_config(),
            &policy,
            &metric,
            &inputs.data.labels,
            &inputs.data.splits.val,
        )
        .map_err(CliError::Numerical)?;
        let flat = logits.as_slice().expect("standard layout");
        let acc = |subset: &[usize]| {
            learning::accuracy_from_logits(flat, params.shape.classes, &inputs.data.labels, subset)
        };
        EvalSummary {
            accuracy: learning::SplitAccuracy {
                train: acc(&inputs.data.splits.train),
                val: acc(&inputs.data.splits.val),
                test: acc(&inputs.data.splits.test),
            },
            best_time: Some(best_time),
        }
    } else {
        let acc = evaluate(&inputs.diffusion_graph, &inputs.data, &params, &train_config(settings))
            .map_err(CliError::Numerical)?;
        EvalSummary {
            accuracy: acc,
            best_time: None,
        }
    };
    let json = serde_json::to_string_pretty(&summary).expect("serializable");
    if let Some(out) = &settings.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::Input(e.into()))?;
        std::fs::write(out.join("eval.json"), json.clone() + "\n")
            .map_err(|e| CliError::Input(e.into()))?;
    }
    println!("{json}");
    Ok(())
}
