//! Seeded verification suites behind `beltrami verify`.
//!
//! Each suite re-derives expected behavior from independent construction
//! (dense matrix exponentials, brute-force neighbor search, finite
//! differences) and reports one named check per property. Everything is
//! seeded and timing-free so reports are byte-identical across runs.

use std::path::Path;

use beltrami::diffusivity::{self, DiffusivityParams, Kernel, Normalizer};
use beltrami::flow::{self, FrozenFlow, JointState, RewiringMode, RewiringPolicy};
use beltrami::graph::Graph;
use beltrami::metric::MetricSpace;
use beltrami::polyakov::{self, ParametricPsi, PsiFamily};
use beltrami::positional::{ppr_encode, PprConfig, PprMode};
use beltrami::solvers::{integrate, SolverConfig, SolverMethod};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::oracles;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_curves: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub suites: Vec<SuiteReport>,
}

fn check(checks: &mut Vec<CheckResult>, name: &str, pass: bool, detail: String) {
    checks.push(CheckResult {
        name: name.to_string(),
        pass,
        detail,
    });
}

fn finish(name: &str, checks: Vec<CheckResult>, curves: Option<Vec<Vec<f64>>>) -> SuiteReport {
    SuiteReport {
        name: name.to_string(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        action_curves: curves,
    }
}

fn random_connected_graph(n: usize, seed: u64) -> Graph {
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

fn random_matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

pub fn polyakov_suite() -> SuiteReport {
    let mut checks = Vec::new();
    let mut curves = Vec::new();
    let mut max_fd_rel = 0.0f64;
    let mut max_mismatch = 0.0f64;
    let mut monotone = true;
    let mut classical_is_two = true;
    for seed in 0..6u64 {
        let n = 6 + 2 * seed as usize;
        let g = random_connected_graph(n, seed);
        let z0 = random_matrix(n, 2, seed + 100, 0.8);
        for (fi, psi) in [
            PsiFamily::Classical,
            PsiFamily::Parametric(ParametricPsi::random(&g, seed + 200)),
        ]
        .iter()
        .enumerate()
        {
            // analytic gradient against central differences
            let analytic = polyakov::grad_action(&g, z0.view(), psi);
            let h = 1e-5;
            let mut fd_diff = 0.0f64;
            let mut z = z0.clone();
            for r in 0..n {
                for c in 0..2 {
                    let orig = z[[r, c]];
                    z[[r, c]] = orig + h;
                    let up = polyakov::action(&g, z.view(), psi);
                    z[[r, c]] = orig - h;
                    let down = polyakov::action(&g, z.view(), psi);
                    z[[r, c]] = orig;
                    fd_diff = fd_diff.max((analytic[[r, c]] - (up - down) / (2.0 * h)).abs());
                }
            }
            let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            max_fd_rel = max_fd_rel.max(fd_diff / scale);

            let report = polyakov::verify_gradient_flow(&g, z0.view(), psi, 200, 0.01);
            monotone &= report.monotone;
            max_mismatch = max_mismatch.max(report.max_flow_mismatch);
            if fi == 0 {
                for (i, j, _) in g.directed_edges() {
                    let a = polyakov::theorem1_diffusivity(&g, z0.view(), psi, i, j).unwrap();
                    classical_is_two &= a == 2.0;
                }
            }
            if seed == 0 {
                curves.push(report.action_values);
            }
        }
    }
    check(
        &mut checks,
        "grad_action matches central finite differences (rel 1e-5)",
        max_fd_rel < 1e-5,
        format!("max relative gap {max_fd_rel:.3e}"),
    );
    check(
        &mut checks,
        "gradient-flow action is non-increasing (tau 0.01, 200 steps)",
        monotone,
        "checked classical and parametric families on 6 seeded graphs".into(),
    );
    check(
        &mut checks,
        "closed-form flow equals weighted-stencil assembly (1e-12)",
        max_mismatch < 1e-12,
        format!("max mismatch {max_mismatch:.3e}"),
    );
    check(
        &mut checks,
        "classical diffusivity is exactly 2",
        classical_is_two,
        "every directed edge, every seeded graph".into(),
    );
    finish("polyakov", checks, Some(curves))
}

pub fn solvers_suite() -> SuiteReport {
    let mut checks = Vec::new();
    let mut max_dopri_gap = 0.0f64;
    let mut errors_bounded = true;
    for seed in 0..4u64 {
        let n = 6 + seed as usize;
        let g = random_connected_graph(n, seed + 300);
        let state = JointState::new(
            random_matrix(n, 2, seed + 310, 1.0),
            random_matrix(n, 3, seed + 320, 1.0),
            1.0,
        )
        .unwrap();
        let params = DiffusivityParams::constant_init(Kernel::ScaledDot, Normalizer::Softmax, 2, 2, 3);
        let weights = flow::edge_weights(&g, &state, &params).unwrap();
        let cfg = SolverConfig {
            method: SolverMethod::Dopri5,
            t_end: 1.5,
            rtol: 1e-8,
            atol: 1e-8,
            ..SolverConfig::default()
        };
        let mut field = FrozenFlow {
            graph: g.clone(),
            weights: weights.clone(),
        };
        let traj = integrate(&state, &cfg, &mut field).unwrap();
        errors_bounded &= traj.stats.accepted_errors.iter().all(|&e| e <= 1.0);
        let propagator = oracles::expm(&(&oracles::dense_generator(&g, &weights.values) * cfg.t_end));
        let end = traj.states.last().unwrap();
        let gap_f = (&propagator.dot(&state.features) - &end.features)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let gap_p = (&propagator.dot(&state.positions) - &end.positions)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        max_dopri_gap = max_dopri_gap.max(gap_f.max(gap_p));
    }
    check(
        &mut checks,
        "dopri5 (rtol=atol=1e-8) within 1e-6 of the matrix exponential",
        max_dopri_gap < 1e-6,
        format!("max gap {max_dopri_gap:.3e}"),
    );
    check(
        &mut checks,
        "accepted dopri5 error estimates stay <= 1",
        errors_bounded,
        "asserted on solver stats".into(),
    );

    // convergence orders on a frozen flow
    let g = random_connected_graph(7, 400);
    let state = JointState::new(
        random_matrix(7, 2, 401, 1.0),
        random_matrix(7, 3, 402, 1.0),
        1.0,
    )
    .unwrap();
    let params = DiffusivityParams::constant_init(Kernel::ScaledDot, Normalizer::Softmax, 2, 2, 3);
    let weights = flow::edge_weights(&g, &state, &params).unwrap();
    let expect = oracles::expm(&oracles::dense_generator(&g, &weights.values)).dot(&state.features);
    let error_at = |method: SolverMethod, tau: f64| {
        let mut field = FrozenFlow {
            graph: g.clone(),
            weights: weights.clone(),
        };
        let cfg = SolverConfig {
            method,
            tau,
            t_end: 1.0,
            ..SolverConfig::default()
        };
        let traj = integrate(&state, &cfg, &mut field).unwrap();
        (&traj.states.last().unwrap().features - &expect)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let taus = [0.1, 0.05, 0.025];
    let mut euler_ok = true;
    let mut rk4_ok = true;
    let mut detail = String::new();
    let euler: Vec<f64> = taus.iter().map(|&t| error_at(SolverMethod::Euler, t)).collect();
    let rk4: Vec<f64> = taus.iter().map(|&t| error_at(SolverMethod::Rk4, t)).collect();
    for w in euler.windows(2) {
        let r = w[0] / w[1];
        euler_ok &= (1.7..=2.3).contains(&r);
        detail.push_str(&format!("euler ratio {r:.3}; "));
    }
    for w in rk4.windows(2) {
        let r = w[0] / w[1];
        rk4_ok &= (12.0..=20.0).contains(&r);
        detail.push_str(&format!("rk4 ratio {r:.3}; "));
    }
    check(
        &mut checks,
        "euler halving ratios within [1.7, 2.3]",
        euler_ok,
        detail.clone(),
    );
    check(
        &mut checks,
        "rk4 halving ratios within [12, 20]",
        rk4_ok,
        detail,
    );
    finish("solvers", checks, None)
}

pub fn attention_suite() -> SuiteReport {
    let mut checks = Vec::new();
    let g = random_connected_graph(12, 500);
    let n = g.n();
    let state = JointState::new(
        random_matrix(n, 2, 501, 1.2),
        random_matrix(n, 3, 502, 1.2),
        0.9,
    )
    .unwrap();
    let mut stochastic = true;
    let mut worst_row_gap = 0.0f64;
    for kernel in [Kernel::ScaledDot, Kernel::CosineSim, Kernel::Pearson, Kernel::ExpKernel] {
        for normalizer in [Normalizer::Softmax, Normalizer::Squareplus] {
            let params = DiffusivityParams {
                w_key: random_matrix(3, 5, 510, 1.0),
                w_query: random_matrix(3, 5, 511, 1.0),
                ..DiffusivityParams::constant_init(kernel, normalizer, 3, 2, 3)
            };
            let w = flow::edge_weights(&g, &state, &params).unwrap();
            for i in 0..n {
                let sum: f64 = w.row(i).iter().sum();
                let gap = (sum - 1.0).abs();
                worst_row_gap = worst_row_gap.max(gap);
                stochastic &= gap < 1e-9 && w.row(i).iter().all(|&v| v >= 0.0);
            }
        }
    }
    check(
        &mut checks,
        "all kernels x normalizers yield row-stochastic weights (1e-9)",
        stochastic,
        format!("worst row-sum gap {worst_row_gap:.3e}"),
    );

    check(
        &mut checks,
        "squareplus(0) = 1",
        diffusivity::squareplus(0.0) == 1.0,
        format!("got {}", diffusivity::squareplus(0.0)),
    );

    let logits: Vec<f64> = (0..g.edge_count()).map(|s| (s as f64 * 0.37).sin()).collect();
    let w1 = diffusivity::normalize_weights(&g, &logits, Normalizer::Softmax);
    let row = g.row_offsets()[3]..g.row_offsets()[4];
    let mut shifted = logits.clone();
    for l in &mut shifted[row.clone()] {
        *l += 11.25;
    }
    let w2 = diffusivity::normalize_weights(&g, &shifted, Normalizer::Softmax);
    let shift_gap = w1.values[row.clone()]
        .iter()
        .zip(&w2.values[row])
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    check(
        &mut checks,
        "softmax shift invariance (1e-12)",
        shift_gap < 1e-12,
        format!("max weight change {shift_gap:.3e}"),
    );

    // alpha = 0 removes all feature dependence
    let zeroed = JointState::new(state.positions.clone(), random_matrix(n, 3, 503, 5.0), 0.0).unwrap();
    let base = JointState::new(state.positions.clone(), state.features.clone(), 0.0).unwrap();
    let params = DiffusivityParams {
        w_key: random_matrix(3, 5, 512, 1.0),
        w_query: random_matrix(3, 5, 513, 1.0),
        ..DiffusivityParams::constant_init(Kernel::ScaledDot, Normalizer::Softmax, 3, 2, 3)
    };
    let wa = flow::edge_weights(&g, &base, &params).unwrap();
    let wb = flow::edge_weights(&g, &zeroed, &params).unwrap();
    check(
        &mut checks,
        "alpha = 0 makes weights position-only",
        wa.values == wb.values,
        "perturbed features, identical weights".into(),
    );
    finish("attention", checks, None)
}

pub fn rewiring_suite() -> SuiteReport {
    let mut checks = Vec::new();
    let mut knn_matches = true;
    for seed in 0..10u64 {
        let n = 8 + 5 * (seed as usize % 4);
        let k = 1 + seed as usize % 4;
        for metric in [MetricSpace::euclidean(3), MetricSpace::poincare_ball(3)] {
            let mut points = random_matrix(n, 3, seed + 600, 1.0);
            if metric.kind == beltrami::metric::MetricKind::PoincareBall {
                points *= 0.3;
            }
            let ours = flow::knn_graph(points.view(), k, &metric).unwrap();
            let brute = oracles::brute_force_knn(points.view(), k, &metric);
            knn_matches &= ours == brute;
        }
    }
    check(
        &mut checks,
        "knn graphs equal the brute-force all-pairs construction",
        knn_matches,
        "10 seeded point sets, euclidean and ball metrics".into(),
    );

    let base = Graph::from_edge_list(&[(0, 1)]).unwrap();
    let points = random_matrix(9, 2, 700, 1.0);
    let m = MetricSpace::euclidean(2);
    let pre = flow::rewire(
        &RewiringPolicy {
            mode: RewiringMode::PrecomputedKnn { k: 3 },
            base: base.clone(),
        },
        points.view(),
        &m,
    )
    .unwrap();
    let ada = flow::rewire(
        &RewiringPolicy {
            mode: RewiringMode::AdaptiveKnn {
                k: 3,
                refresh_every: 1,
            },
            base: base.clone(),
        },
        points.view(),
        &m,
    )
    .unwrap();
    check(
        &mut checks,
        "adaptive knn on static positions equals precomputed knn",
        pre == ada,
        "same stencil either way".into(),
    );

    let fixed = flow::rewire(&RewiringPolicy::fixed(base.clone()), points.view(), &m).unwrap();
    check(
        &mut checks,
        "fixed mode returns the base graph",
        fixed == base,
        "passthrough".into(),
    );
    finish("rewiring", checks, None)
}

/// Audits an edge-list file without repairing it. A well-formed file
/// declares every undirected edge either exactly once (any orientation)
/// or exactly twice (both orientations); self-loops, repeated lines, and
/// a mix of the two conventions are reported with the violated invariant.
fn audit_edge_list(pairs: &[(usize, usize)]) -> beltrami::Result<Graph> {
    use std::collections::BTreeSet;
    let mut seen = BTreeSet::new();
    for &(a, b) in pairs {
        if a == b {
            return Err(beltrami::Error::SelfLoop(a));
        }
        if !seen.insert((a, b)) {
            return Err(beltrami::Error::DuplicateEdge(a, b));
        }
    }
    let with_reverse = pairs.iter().filter(|&&(a, b)| seen.contains(&(b, a))).count();
    if with_reverse == pairs.len() {
        Graph::from_edge_list_strict(pairs)
    } else if with_reverse == 0 {
        let mut directed = Vec::with_capacity(pairs.len() * 2);
        for &(a, b) in pairs {
            directed.push((a, b));
            directed.push((b, a));
        }
        Graph::from_edge_list_strict(&directed)
    } else {
        let &(a, b) = pairs
            .iter()
            .find(|&&(a, b)| !seen.contains(&(b, a)))
            .expect("mixed conventions imply a one-directional pair");
        Err(beltrami::Error::AsymmetricEdge(a, b))
    }
}

/// Strict invariant audit of an edge-list file; violations surface with
/// the invariant's name.
pub fn graph_suite(path: &Path) -> SuiteReport {
    let mut checks = Vec::new();
    let loaded = beltrami::io::read_edge_list(path).and_then(|pairs| audit_edge_list(&pairs));
    match loaded {
        Ok(g) => {
            check(
                &mut checks,
                "edge list satisfies the storage invariants",
                true,
                format!("n = {}, directed slots = {}", g.n(), g.edge_count()),
            );
            // sanity: PPR on the declared graph stays stochastic
            let ppr = ppr_encode(
                &g,
                &PprConfig {
                    beta: 0.85,
                    mode: PprMode::LinearSolve,
                    topk: None,
                },
            );
            let pass = match ppr {
                Ok(u) => (0..g.n()).all(|i| {
                    let s: f64 = (0..g.n()).map(|j| u[[i, j]]).sum();
                    (s - 1.0).abs() < 1e-10
                }),
                Err(_) => false,
            };
            check(
                &mut checks,
                "ppr rows on the graph are stochastic",
                pass,
                "linear-solve mode".into(),
            );
        }
        Err(e) => {
            let name = match e {
                beltrami::Error::AsymmetricEdge(..) => {
                    "symmetry: (i,j) present <=> (j,i) present"
                }
                beltrami::Error::SelfLoop(_) => "no self-loops",
                beltrami::Error::DuplicateEdge(..) => "no duplicate edges",
                beltrami::Error::EmptyGraph => "non-empty edge list",
                _ => "edge list parses",
            };
            check(&mut checks, name, false, format!("{e}"));
        }
    }
    finish("graph", checks, None)
}

pub fn run(suite: &str, graph_file: Option<&Path>) -> Result<VerifyReport, CliError> {
    let mut suites = Vec::new();
    match suite {
        "polyakov" => suites.push(polyakov_suite()),
        "solvers" => suites.push(solvers_suite()),
        "attention" => suites.push(attention_suite()),
        "rewiring" => suites.push(rewiring_suite()),
        "all" => {
            suites.push(polyakov_suite());
            suites.push(solvers_suite());
            suites.push(attention_suite());
            suites.push(rewiring_suite());
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown suite `{other}` (expected polyakov|solvers|attention|rewiring|all)"
            )))
        }
    }
    if let Some(path) = graph_file {
        suites.push(graph_suite(path));
    }
    Ok(VerifyReport {
        pass: suites.iter().all(|s| s.pass),
        suites,
    })
}
