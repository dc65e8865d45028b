//! Acceptance suite: the release-gating properties, each with its
//! tolerance pinned in code. Run with `--nocapture` to see one pass line
//! per criterion.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use beltrami::diffusivity::{self, DiffusivityParams, ExpKernelParams, Kernel, Normalizer};
use beltrami::flow::{self, JointState, FrozenFlow};
use beltrami::graph::Graph;
use beltrami::learning::{
    self, generate_splits, BlendObjective, DataSet, GradMode, ModelParams, ModelShape, TrainConfig,
};
use beltrami::metric::MetricSpace;
use beltrami::polyakov::{self, ParametricPsi, PsiFamily};
use beltrami::positional::{poincare_embed, ppr_encode, HypEmbedConfig, PprConfig, PprMode};
use beltrami::solvers::{integrate, SolverConfig, SolverMethod};
use beltrami_cli::oracles;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn passed(n: usize, name: &str, detail: String) {
    println!("[PASS] criterion {n} ({name}): {detail}");
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

#[test]
fn acceptance_1_theorem1_verification() {
    let started = Instant::now();
    let mut max_fd_rel = 0.0f64;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let n = rng.gen_range(4..=16);
        let channels = rng.gen_range(1..=3);
        let g = random_connected_graph(n, 2000 + trial);
        let z0 = random_matrix(n, channels, 3000 + trial, 0.8);
        for psi in [
            PsiFamily::Classical,
            PsiFamily::Parametric(ParametricPsi::random(&g, 4000 + trial)),
        ] {
            // analytic gradient vs central finite differences (h = 1e-5)
            let analytic = polyakov::grad_action(&g, z0.view(), &psi);
            let h = 1e-5;
            let mut z = z0.clone();
            let mut gap = 0.0f64;
            for r in 0..n {
                for c in 0..channels {
                    let orig = z[[r, c]];
                    z[[r, c]] = orig + h;
                    let up = polyakov::action(&g, z.view(), &psi);
                    z[[r, c]] = orig - h;
                    let down = polyakov::action(&g, z.view(), &psi);
                    z[[r, c]] = orig;
                    gap = gap.max((analytic[[r, c]] - (up - down) / (2.0 * h)).abs());
                }
            }
            let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            max_fd_rel = max_fd_rel.max(gap / scale);
            assert!(gap / scale < 1e-5, "trial {trial}: fd gap {:.3e}", gap / scale);

            // Euler gradient flow (tau = 0.01, 200 steps): action never increases
            let report = polyakov::verify_gradient_flow(&g, z0.view(), &psi, 200, 0.01);
            assert!(
                report.monotone,
                "trial {trial}: action increased at step {:?}",
                report.first_violation
            );
            assert!(report.max_flow_mismatch < 1e-12);
        }
        // classical diffusivity is exactly 2 on every edge
        for (i, j, _) in g.directed_edges() {
            let a = polyakov::theorem1_diffusivity(&g, z0.view(), &PsiFamily::Classical, i, j).unwrap();
            assert_eq!(a, 2.0);
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    passed(
        1,
        "theorem-1 verification",
        format!(
            "20 graphs, both families: max fd rel {max_fd_rel:.3e}, flows monotone, classical = 2; {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn acceptance_2_solver_oracle_equivalence() {
    let started = Instant::now();
    let mut max_gap = 0.0f64;
    for trial in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let n = rng.gen_range(6..=10);
        let g = random_connected_graph(n, 6000 + trial);
        let state = JointState::new(
            random_matrix(n, 2, 7000 + trial, 1.0),
            random_matrix(n, 3, 8000 + trial, 1.0),
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
        let propagator =
            oracles::expm(&(&oracles::dense_generator(&g, &weights.values) * cfg.t_end));
        let end = traj.states.last().unwrap();
        let gap = (&propagator.dot(&state.features) - &end.features)
            .iter()
            .chain((&propagator.dot(&state.positions) - &end.positions).iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        max_gap = max_gap.max(gap);
        assert!(gap < 1e-6, "trial {trial}: dopri5 vs expm gap {gap:.3e}");
    }

    // convergence orders against the exponential oracle
    let g = random_connected_graph(8, 9000);
    let state = JointState::new(
        random_matrix(8, 2, 9001, 1.0),
        random_matrix(8, 3, 9002, 1.0),
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
    let euler: Vec<f64> = taus.iter().map(|&t| error_at(SolverMethod::Euler, t)).collect();
    let rk4: Vec<f64> = taus.iter().map(|&t| error_at(SolverMethod::Rk4, t)).collect();
    let mut ratios = String::new();
    for w in euler.windows(2) {
        let r = w[0] / w[1];
        assert!((1.7..=2.3).contains(&r), "euler ratio {r}");
        ratios.push_str(&format!("euler {r:.2} "));
    }
    for w in rk4.windows(2) {
        let r = w[0] / w[1];
        assert!((12.0..=20.0).contains(&r), "rk4 ratio {r}");
        ratios.push_str(&format!("rk4 {r:.2} "));
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    passed(
        2,
        "solver-oracle equivalence",
        format!("max dopri5 gap {max_gap:.3e}; ratios {ratios}; {:.2}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn acceptance_3_gat_reduction() {
    let mut max_gap = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
        let n = rng.gen_range(3..=10);
        let g = random_connected_graph(n, 11_000 + trial);
        let channels = rng.gen_range(1..=4);
        let x = random_matrix(n, channels, 12_000 + trial, 2.0);
        let params = DiffusivityParams {
            w_key: random_matrix(3, channels, 13_000 + trial, 1.0),
            w_query: random_matrix(3, channels, 14_000 + trial, 1.0),
            ..DiffusivityParams::constant_init(Kernel::ScaledDot, Normalizer::Softmax, 3, 0, channels)
        };
        let tau = rng.gen_range(0.05..1.0);
        let via_gat = flow::gat_reduction_step(&g, x.view(), &params, tau).unwrap();
        let state = JointState::features_only(x, 1.0).unwrap();
        let deriv = flow::rhs(&g, &state, &params).unwrap();
        let via_euler = state.add_scaled(tau, &deriv);
        let gap = (&via_gat - &via_euler.features)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        max_gap = max_gap.max(gap);
        assert!(gap <= 1e-14, "trial {trial}: gap {gap:.3e}");
    }
    passed(3, "gat reduction", format!("100 instances, max gap {max_gap:.3e}"));
}

#[test]
fn acceptance_4_diffusivity_contracts() {
    let g = random_connected_graph(12, 15_000);
    let n = g.n();
    let state = JointState::new(
        random_matrix(n, 2, 15_001, 1.2),
        random_matrix(n, 3, 15_002, 1.2),
        0.8,
    )
    .unwrap();
    let mut worst_row = 0.0f64;
    for kernel in [Kernel::ScaledDot, Kernel::CosineSim, Kernel::Pearson, Kernel::ExpKernel] {
        for normalizer in [Normalizer::Softmax, Normalizer::Squareplus] {
            let params = DiffusivityParams {
                w_key: random_matrix(3, 5, 15_010, 1.0),
                w_query: random_matrix(3, 5, 15_011, 1.0),
                kernel,
                normalizer,
                pos_dim: 2,
                exp_kernel: ExpKernelParams::default(),
            };
            let w = flow::edge_weights(&g, &state, &params).unwrap();
            for i in 0..n {
                if g.degree(i) == 0 {
                    continue;
                }
                let sum: f64 = w.row(i).iter().sum();
                worst_row = worst_row.max((sum - 1.0).abs());
                assert!(
                    (sum - 1.0).abs() < 1e-9,
                    "{kernel:?}/{normalizer:?} row {i} sums to {sum}"
                );
                assert!(w.row(i).iter().all(|&v| v >= 0.0));
            }
        }
    }

    assert_eq!(diffusivity::squareplus(0.0), 1.0);

    let logits: Vec<f64> = (0..g.edge_count()).map(|s| (s as f64 * 0.61).cos()).collect();
    let w1 = diffusivity::normalize_weights(&g, &logits, Normalizer::Softmax);
    let mut shifted = logits.clone();
    let row = g.row_offsets()[2]..g.row_offsets()[3];
    for l in &mut shifted[row.clone()] {
        *l += 42.0;
    }
    let w2 = diffusivity::normalize_weights(&g, &shifted, Normalizer::Softmax);
    let shift_gap = w1.values[row.clone()]
        .iter()
        .zip(&w2.values[row])
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(shift_gap < 1e-12, "shift gap {shift_gap:.3e}");
    passed(
        4,
        "diffusivity contracts",
        format!("worst row-sum gap {worst_row:.3e}, squareplus(0)=1, shift gap {shift_gap:.3e}"),
    );
}

#[test]
fn acceptance_5_ppr_correctness() {
    // closed forms
    let path2 = Graph::from_edge_list(&[(0, 1)]).unwrap();
    let u = ppr_encode(
        &path2,
        &PprConfig {
            beta: 0.5,
            ..PprConfig::default()
        },
    )
    .unwrap();
    for (idx, expect) in [((0, 0), 2.0 / 3.0), ((0, 1), 1.0 / 3.0), ((1, 0), 1.0 / 3.0), ((1, 1), 2.0 / 3.0)] {
        assert!((u[[idx.0, idx.1]] - expect).abs() < 1e-10);
    }
    let cycle3 = Graph::from_edge_list(&[(0, 1), (1, 2), (2, 0)]).unwrap();
    let u = ppr_encode(
        &cycle3,
        &PprConfig {
            beta: 0.5,
            ..PprConfig::default()
        },
    )
    .unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 0.6 } else { 0.2 };
            assert!((u[[i, j]] - expect).abs() < 1e-10);
        }
    }

    // series vs linear solve, stochastic rows
    let mut max_mode_gap = 0.0f64;
    for trial in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(16_000 + trial);
        let n = rng.gen_range(6..=32);
        let g = random_connected_graph(n, 17_000 + trial);
        let beta = rng.gen_range(0.3..0.9);
        let series = ppr_encode(
            &g,
            &PprConfig {
                beta,
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
                beta,
                mode: PprMode::LinearSolve,
                topk: None,
            },
        )
        .unwrap();
        let gap = (&series - &solve).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        max_mode_gap = max_mode_gap.max(gap);
        assert!(gap < 1e-8, "trial {trial}: mode gap {gap:.3e} (n = {n}, beta = {beta})");
        for i in 0..n {
            let sum: f64 = (0..n).map(|j| series[[i, j]]).sum();
            assert!((sum - 1.0).abs() < 1e-10);
            assert!((0..n).all(|j| series[[i, j]] >= 0.0));
        }
    }
    passed(
        5,
        "ppr correctness",
        format!("closed forms to 1e-10; max series/solve gap {max_mode_gap:.3e}"),
    );
}

#[test]
fn acceptance_6_rewiring_oracle() {
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(18_000 + trial);
        let n = rng.gen_range(5..=64);
        let k = rng.gen_range(1..=4.min(n - 1));
        let dim = rng.gen_range(1..=3);
        for metric in [MetricSpace::euclidean(dim), MetricSpace::poincare_ball(dim)] {
            let mut points = random_matrix(n, dim, 19_000 + trial, 1.0);
            if metric.kind == beltrami::metric::MetricKind::PoincareBall {
                points *= 0.4;
            }
            let ours = flow::knn_graph(points.view(), k, &metric).unwrap();
            let brute = oracles::brute_force_knn(points.view(), k, &metric);
            assert_eq!(ours, brute, "trial {trial} ({:?})", metric.kind);
        }
    }
    passed(6, "rewiring oracle", "50 point sets, both metrics, exact match".into());
}

#[test]
fn acceptance_7_gradient_consistency() {
    let mut worst = 0.0f64;
    for trial in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(20_000 + trial);
        let n = rng.gen_range(4..=8);
        let g = random_connected_graph(n, 21_000 + trial);
        let shape = ModelShape {
            raw_pos_dim: 2,
            raw_feat_dim: 3,
            pos_dim: 2,
            feat_dim: 3,
            key_dim: 2,
            classes: 2,
            kernel: Kernel::ScaledDot,
            normalizer: Normalizer::Softmax,
            exp_kernel: ExpKernelParams::default(),
        };
        let raw_pos = random_matrix(n, 2, 22_000 + trial, 1.0);
        let raw_feat = random_matrix(n, 3, 23_000 + trial, 1.0);
        let labels: Vec<i64> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let subset: Vec<usize> = (0..n).collect();
        let mut theta: Vec<f64> = (0..shape.param_count())
            .map(|_| rng.gen_range(-0.7..0.7))
            .collect();
        theta[0] = theta[0].abs(); // keep things generic but bounded
        let steps = rng.gen_range(1..=3);
        let obj = BlendObjective {
            shape: &shape,
            graph: &g,
            raw_pos: raw_pos.view(),
            raw_feat: raw_feat.view(),
            labels: &labels,
            subset: &subset,
            method: SolverMethod::Euler,
            tau: 0.4,
            t_end: 0.4 * steps as f64,
        };
        let reverse = learning::gradient(&obj, &theta, GradMode::UnrolledReverse).unwrap();
        let fd = learning::gradient(&obj, &theta, GradMode::FiniteDifference { h: 1e-5 }).unwrap();
        let scale = reverse.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let gap = reverse
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale;
        worst = worst.max(gap);
        assert!(gap < 1e-4, "trial {trial}: rel linf {gap:.3e}");
    }
    passed(7, "gradient consistency", format!("worst rel linf {worst:.3e}"));
}

struct KarateFixture {
    graph: Graph,
    features: Array2<f64>,
    labels: Vec<i64>,
}

fn load_karate() -> KarateFixture {
    let dir = fixtures();
    let graph = beltrami::io::read_graph(&dir.join("karate_edges.tsv")).unwrap();
    let features = beltrami::io::read_matrix(&dir.join("karate_features.txt")).unwrap();
    let labels = beltrami::io::read_labels(&dir.join("karate_labels.txt")).unwrap();
    assert_eq!(graph.n(), 34);
    assert_eq!(graph.edge_count(), 156);
    KarateFixture {
        graph,
        features,
        labels,
    }
}

fn karate_arm(fix: &KarateFixture, seed: u64, poincare: bool, t_end: f64) -> f64 {
    let positions = if poincare {
        let m = MetricSpace::poincare_ball(2);
        let cfg = HypEmbedConfig {
            dim: 2,
            epochs: 300,
            lr: 0.05,
            negatives_per_edge: 5,
            seed,
        };
        poincare_embed(&fix.graph, &m, &cfg).unwrap()
    } else {
        Array2::zeros((34, 0))
    };
    let shape = ModelShape {
        raw_pos_dim: positions.ncols(),
        raw_feat_dim: 34,
        pos_dim: if poincare { 2 } else { 0 },
        feat_dim: 8,
        key_dim: 4,
        classes: 2,
        kernel: Kernel::ScaledDot,
        normalizer: Normalizer::Softmax,
        exp_kernel: ExpKernelParams::default(),
    };
    let splits = generate_splits(&fix.labels, 4, 4, seed).unwrap();
    assert_eq!(splits.train.len(), 8);
    let data = DataSet {
        raw_positions: positions,
        raw_features: fix.features.clone(),
        labels: fix.labels.clone(),
        splits,
    };
    let cfg = TrainConfig {
        lr: 0.5,
        epochs: 100,
        grad_mode: GradMode::UnrolledReverse,
        method: SolverMethod::Euler,
        tau: 0.5,
        t_end,
    };
    let params0 = ModelParams::init(shape, seed).unwrap();
    let (best, _) = learning::train(&fix.graph, &data, &params0, &cfg).unwrap();
    learning::evaluate(&fix.graph, &data, &best, &cfg).unwrap().test
}

#[test]
fn acceptance_8_desk_scale_learning_signal() {
    let started = Instant::now();
    let fix = load_karate();
    let seeds: Vec<u64> = (0..10).collect();
    let mean = |f: &dyn Fn(u64) -> f64| {
        seeds.iter().map(|&s| f(s)).sum::<f64>() / seeds.len() as f64
    };
    let blend_t3 = mean(&|s| karate_arm(&fix, s, true, 3.0));
    let baseline_t0 = mean(&|s| karate_arm(&fix, s, false, 0.0));
    let no_positional_t3 = mean(&|s| karate_arm(&fix, s, false, 3.0));

    // (a) diffusion beats the no-diffusion baseline by at least 10 points
    assert!(
        blend_t3 - baseline_t0 >= 0.10,
        "gap (a) = {:.4} < 0.10 (blend {blend_t3:.4}, baseline {baseline_t0:.4})",
        blend_t3 - baseline_t0
    );
    // (b) hyperbolic positional encodings do not hurt
    assert!(
        blend_t3 >= no_positional_t3,
        "gap (b) = {:.4} < 0 (blend {blend_t3:.4}, no-positional {no_positional_t3:.4})",
        blend_t3 - no_positional_t3
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    passed(
        8,
        "desk-scale learning signal",
        format!(
            "blend(T=3) {blend_t3:.4}, no-diffusion {baseline_t0:.4}, no-positional {no_positional_t3:.4}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn acceptance_9_determinism() {
    let bin = env!("CARGO_BIN_EXE_beltrami");
    let fix = fixtures();

    let verify_out = |dir: &Path| {
        let out = Command::new(bin)
            .args(["verify", "all"])
            .current_dir(dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "verify all failed: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    assert_eq!(verify_out(d1.path()), verify_out(d2.path()), "verify output differs");

    let train_out = |dir: &Path| {
        let out = Command::new(bin)
            .args([
                "train",
                "--graph",
                fix.join("karate_edges.tsv").to_str().unwrap(),
                "--features",
                fix.join("karate_features.txt").to_str().unwrap(),
                "--labels",
                fix.join("karate_labels.txt").to_str().unwrap(),
                "--positional",
                "poincare",
                "--seed",
                "3",
                "--set",
                "epochs=20",
                "--out",
                dir.join("run").to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
        (
            std::fs::read(dir.join("run/metrics.jsonl")).unwrap(),
            std::fs::read(dir.join("run/summary.json")).unwrap(),
            std::fs::read(dir.join("run/params.json")).unwrap(),
        )
    };
    let r1 = train_out(d1.path());
    let r2 = train_out(d2.path());
    assert_eq!(r1.0, r2.0, "metrics.jsonl differs between runs");
    assert_eq!(r1.1, r2.1, "summary.json differs between runs");
    assert_eq!(r1.2, r2.2, "params.json differs between runs");
    passed(
        9,
        "determinism",
        "verify-all stdout and seeded train outputs byte-identical across runs".into(),
    );
}
