//! Acceptance gate: one test (one pass/fail line) per criterion.
//!
//! Criterion 8 depends on an external feeder dataset that is not shipped with
//! the repository; its test skips with a notice when the file is absent, and
//! criteria 1-7 and 9 then constitute full acceptance.

mod common;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radial_sopf::certify::{
    a_priori_certificate, default_s_bar, max_capacity_lp, relative_gap_bound, CapacityMode,
    GapBound, Verdict,
};
use radial_sopf::conic::{solve_conic, SolveStatus};
use radial_sopf::network::{load_network, NetworkFormat};
use radial_sopf::oracle::radial_load_flow;
use radial_sopf::program::{
    build_program, extract_operating_point, CostSpec, Instance, Options,
};
use radial_sopf::scenario::{
    build_scenario_tree, residual_demand, SdeParams, TimeGrid,
};
use radial_sopf::sweep::{injections, recover_feasible_point};

use common::corpus;

/// Corollary-style fixed-point exactness: the sweep converges within 200
/// iterations on every corpus instance and closes the quadratic equality to
/// 1e-8 per (line, node).
#[test]
fn criterion_1_sweep_fixed_point_exactness() {
    for (k, case) in corpus().iter().enumerate() {
        assert!(
            case.outcome.iterations <= 200,
            "case {k}: {} iterations",
            case.outcome.iterations
        );
        let op = &case.outcome.point;
        for n in 0..op.n_nodes {
            for (l, line) in case.inst.net.lines().iter().enumerate() {
                let s = op.s_flow[op.ln(l, n)];
                let gap = op.v[op.bn(line.from, n)] * op.current[op.ln(l, n)] - s.norm_sqr();
                assert!(gap.abs() <= 1e-8, "case {k}, line {l}, node {n}: gap {gap}");
            }
        }
    }
    println!("criterion 1: PASS — sweep fixed-point exactness on 100 random instances");
}

/// Monotone iteration: per iteration, currents and the slack injection never
/// rise, voltages and flows never fall (slack 1e-10), and the recovered cost
/// never exceeds the start's.
#[test]
fn criterion_2_monotonicity_suite() {
    for (k, case) in corpus().iter().enumerate() {
        for row in &case.outcome.log {
            for (name, v) in [
                ("dI+", row.max_di),
                ("dv-", row.max_dv),
                ("dS-", row.max_ds),
                ("ds0+", row.max_ds0),
            ] {
                assert!(v <= 1e-10, "case {k}, iter {}: {name} = {v:e}", row.iter);
            }
        }
        assert!(
            case.outcome.point.objective <= case.start.objective + 1e-10,
            "case {k}: cost rose from {} to {}",
            case.start.objective,
            case.outcome.point.objective
        );
    }
    println!("criterion 2: PASS — five monotone inequalities hold on every iteration");
}

/// Desk-scale zero-gap: a 4-bus, 3-stage, 2-scenario pure-load instance
/// passes the a-priori certificate, and the recovered exact point reproduces
/// the relaxation value to 1e-6 relative.
#[test]
fn criterion_3_zero_gap_reproduction() {
    let doc = serde_json::json!({"s_base_mva": 1.0, "v_base_kv": 12.0, "buses": [
        {"id": 0, "v_min": 1.0, "v_max": 1.0, "peak": 0.0},
        {"id": 1, "parent": 0, "r": 0.01, "x": 0.008, "v_min": 0.81, "v_max": 1.21, "peak": 0.8},
        {"id": 2, "parent": 1, "r": 0.012, "x": 0.01, "v_min": 0.81, "v_max": 1.21, "peak": 0.6},
        {"id": 3, "parent": 1, "r": 0.009, "x": 0.007, "v_min": 0.81, "v_max": 1.21, "peak": 0.9},
    ]});
    let net = load_network(doc.to_string().as_bytes(), NetworkFormat::Json).unwrap();
    let grid = TimeGrid::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let params = SdeParams { n_paths: 512, ..SdeParams::reference() };
    let tree = build_scenario_tree(&params, &grid, &[2, 1], 11).unwrap();
    assert_eq!(tree.n_leaves(), 2);
    let profile = vec![0.5, 0.7, 0.4];
    let demand = residual_demand(&net, &tree, &profile).unwrap();

    let s_bar = default_s_bar(&net, &demand);
    let cert = a_priori_certificate(&net, &s_bar, tree.n_nodes(), true).unwrap();
    assert_eq!(cert.verdict, Verdict::Pass, "certificate must pass: {:?}", cert.violations);

    let relaxed = Instance {
        net: net.clone(),
        tree: tree.clone(),
        demand: demand.clone(),
        cost: CostSpec::reference(),
        options: Options::default(),
    };
    let (p, idx) = build_program(&relaxed).unwrap();
    let sol = solve_conic(&p, 1e-10).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    let val_soc = extract_operating_point(&relaxed, &idx, &sol.x).unwrap().objective;

    let mut restricted = relaxed;
    restricted.options.restricted = true;
    let (p, idx) = build_program(&restricted).unwrap();
    let sol = solve_conic(&p, 1e-10).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    let start = extract_operating_point(&restricted, &idx, &sol.x).unwrap();
    let recovered = recover_feasible_point(&restricted, &start, 1e-10, 500).unwrap();

    let rel = (val_soc - recovered.point.objective).abs() / val_soc.abs();
    assert!(rel <= 1e-6, "relative gap {rel:e}");
    println!("criterion 3: PASS — certified instance closes the relaxation gap ({rel:.2e})");
}

/// Independent ground truth: the exact load flow run on the recovered
/// injections agrees with the sweep's limit to 1e-8 componentwise.
#[test]
fn criterion_4_oracle_equivalence() {
    for (k, case) in corpus().iter().enumerate() {
        let op = &case.outcome.point;
        let s = injections(&case.inst, op);
        let lf = radial_load_flow(&case.inst.net, &s, case.inst.tree.n_nodes(), 1e-13, 1000);
        assert!(lf.converged, "case {k}: load flow did not converge");
        for i in 0..lf.current.len() {
            assert!((lf.current[i] - op.current[i]).abs() <= 1e-8, "case {k}, current {i}");
            assert!((lf.s_flow[i] - op.s_flow[i]).norm() <= 1e-8, "case {k}, flow {i}");
        }
        for i in 0..lf.v.len() {
            assert!((lf.v[i] - op.v[i]).abs() <= 1e-8, "case {k}, voltage {i}");
        }
        for n in 0..lf.s0.len() {
            assert!((lf.s0[n] - op.s0[n]).norm() <= 1e-8, "case {k}, slack {n}");
        }
    }
    println!("criterion 4: PASS — sweep limits match the independent load flow");
}

/// Gap-bound formula: exact values on hand pairs and invariance under common
/// positive scaling.
#[test]
fn criterion_5_gap_bound_formula() {
    match relative_gap_bound(Some(100.0), 100.0).unwrap() {
        GapBound::Finite(e) => assert_eq!(e, 0.0),
        GapBound::Infinite => panic!("finite pair"),
    }
    match relative_gap_bound(Some(101.0), 100.0).unwrap() {
        // 2·(101−100)/(100+101); the rounded 0.00995025 differs from the
        // exact rational by 1.2e-9, so assert against the rational
        GapBound::Finite(e) => assert!((e - 2.0 / 201.0).abs() <= 1e-9, "{e}"),
        GapBound::Infinite => panic!("finite pair"),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let a: f64 = rng.gen_range(0.1..100.0);
        let b: f64 = rng.gen_range(0.1..100.0);
        let lam: f64 = rng.gen_range(0.001..1000.0);
        let e1 = match relative_gap_bound(Some(a), b).unwrap() {
            GapBound::Finite(e) => e,
            GapBound::Infinite => panic!("finite pair"),
        };
        let e2 = match relative_gap_bound(Some(lam * a), lam * b).unwrap() {
            GapBound::Finite(e) => e,
            GapBound::Infinite => panic!("finite pair"),
        };
        assert!((e1 - e2).abs() <= 1e-12 * (1.0 + e1.abs()), "{e1} vs {e2}");
    }
    println!("criterion 5: PASS — gap-bound values and scale invariance");
}

/// Two-bus analytic load flow against the closed-form quadratic root.
#[test]
fn criterion_6_two_bus_analytic_load_flow() {
    let doc = serde_json::json!({"s_base_mva": 1.0, "v_base_kv": 12.0, "buses": [
        {"id": 0, "v_min": 1.0, "v_max": 1.0, "peak": 0.0},
        {"id": 1, "parent": 0, "r": 0.01, "x": 0.01, "v_min": 0.81, "v_max": 1.21, "peak": 1.0},
    ]});
    let net = load_network(doc.to_string().as_bytes(), NetworkFormat::Json).unwrap();
    let s = vec![Complex64::default(), Complex64::new(-1.0, 0.0)];
    let lf = radial_load_flow(&net, &s, 1, 1e-13, 500);
    assert!(lf.converged);
    // smaller root of 0.0002 I² − 0.98 I + 1 = 0 and the implied voltage
    let (a, b, c) = (0.0002f64, -0.98f64, 1.0f64);
    let i_star = (-b - (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
    let v_star = 0.98 - 0.0002 * i_star;
    assert!((lf.current[0] - i_star).abs() <= 1e-9, "I = {}", lf.current[0]);
    assert!((lf.v[1] - v_star).abs() <= 1e-9, "v1 = {}", lf.v[1]);
    println!("criterion 6: PASS — 2-bus load flow hits the quadratic-root oracle");
}

/// Toy capacity LP: the 2-bus threshold equals the hand-derived binding
/// constraint 0.55 · 1.2 / √1.04 = 0.647183.
#[test]
fn criterion_7_toy_capacity_lp() {
    let doc = serde_json::json!({"s_base_mva": 1.0, "v_base_kv": 12.0, "buses": [
        {"id": 0, "v_min": 1.0, "v_max": 1.0, "peak": 0.0},
        {"id": 1, "parent": 0, "r": 0.01, "x": 0.01, "v_min": 0.81, "v_max": 1.21, "peak": 1.0},
    ]});
    let net = load_network(doc.to_string().as_bytes(), NetworkFormat::Json).unwrap();
    let load = 0.55 * Complex64::new(1.0, 0.2) / 1.04f64.sqrt();
    let fixed = vec![Complex64::default(), -load];
    let cert = max_capacity_lp(&net, &[0.0, 1.0], &fixed, CapacityMode::Scaled, true).unwrap();
    match cert.verdict {
        Verdict::Threshold(t) => {
            assert!((t - 0.647183).abs() <= 1e-6, "threshold {t}");
        }
        other => panic!("unexpected verdict {other:?}"),
    }
    println!("criterion 7: PASS — capacity threshold 0.647183 reproduced");
}

/// Feeder-dataset reproduction; runs only when the transcribed dataset file
/// exists. The repository does not ship it (the source presents the feeder
/// only graphically), so the default outcome is a skip.
#[test]
fn criterion_8_dataset_gated_reproduction() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/sce56.json");
    if !path.exists() {
        println!(
            "criterion 8: SKIP — dataset {} not present; criteria 1-7 and 9 form full acceptance",
            path.display()
        );
        return;
    }
    let bytes = std::fs::read(&path).unwrap();
    let net = load_network(bytes.as_slice(), NetworkFormat::Json).unwrap();
    let mut pattern = vec![1.0; net.n_buses()];
    pattern[0] = 0.0;
    let fixed = vec![Complex64::default(); net.n_buses()];
    let cert = max_capacity_lp(&net, &pattern, &fixed, CapacityMode::Scaled, true).unwrap();
    match cert.verdict {
        Verdict::Threshold(t) => assert!((t - 1.7023).abs() <= 1e-3, "LP value {t}"),
        other => panic!("unexpected verdict {other:?}"),
    }
    println!("criterion 8: PASS — dataset capacity LP reproduced");
}

/// Scenario-tree statistics with the reference diffusion parameters and the
/// daily stage grid: branching 2 at the 10h, 12h and 14h stages.
#[test]
fn criterion_9_scenario_tree_statistics() {
    let grid = TimeGrid::daily();
    // transitions into stages starting at 10, 12, and 14 hours branch in two
    let branching: Vec<usize> = (0..grid.n_stages() - 1)
        .map(|t| {
            let tau = grid.tau(t + 1);
            if tau == 10.0 || tau == 12.0 || tau == 14.0 { 2 } else { 1 }
        })
        .collect();
    let params = SdeParams::reference();
    let tree = build_scenario_tree(&params, &grid, &branching, 2024).unwrap();
    let leaves = tree.leaves();
    assert_eq!(leaves.len(), 8);
    for &leaf in &leaves {
        let p = tree.node(leaf).prob;
        assert!((p - 0.125).abs() < 1e-15, "leaf prob {p}");
    }
    for node in tree.nodes() {
        assert!((0.0..=1.0).contains(&node.value), "value {}", node.value);
        let kids = tree.children(node.id);
        for pair in kids.windows(2) {
            assert!(
                tree.node(pair[0]).value <= tree.node(pair[1]).value,
                "children not quantile-ordered at node {}",
                node.id
            );
        }
    }
    let again = build_scenario_tree(&params, &grid, &branching, 2024).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    tree.to_json(&mut a).unwrap();
    again.to_json(&mut b).unwrap();
    assert_eq!(a, b, "regeneration with the same seed must be bit-identical");
    println!("criterion 9: PASS — 8-leaf tree statistics and determinism");
}
