//! Cross-formulation and structural properties that tie the modules
//! together: scenario-path expansion, storage telescoping, and the
//! certificate-implies-zero-gap implication.

mod common;

use std::collections::HashMap;

use radial_sopf::certify::{a_priori_certificate, default_s_bar};
use radial_sopf::conic::{solve_conic, SolveStatus};
use radial_sopf::program::{build_program, extract_operating_point, Instance};
use radial_sopf::scenario::{DemandLattice, ScenarioTree};

use common::corpus;

/// Serializes a path-expanded copy of the tree: one root, then every stage
/// t ≥ 1 duplicated per scenario (branching S,1,…,1). Returns the tree and
/// the map from expanded node id to the original node it copies.
fn expand_to_paths(tree: &ScenarioTree) -> (ScenarioTree, Vec<usize>) {
    let leaves = tree.leaves();
    let s_count = leaves.len();
    let n_stages = tree.grid.n_stages();
    let mut nodes = Vec::new();
    let mut origin = Vec::new();
    let root = tree.node(tree.root());
    nodes.push(serde_json::json!({
        "id": 0, "stage": 0, "value": root.value, "prob": 1.0
    }));
    origin.push(tree.root());
    for t in 1..n_stages {
        for (s, &leaf) in leaves.iter().enumerate() {
            let o = tree.ancestor_at(leaf, t);
            let id = 1 + (t - 1) * s_count + s;
            let parent = if t == 1 { 0 } else { 1 + (t - 2) * s_count + s };
            nodes.push(serde_json::json!({
                "id": id,
                "stage": t,
                "parent": parent,
                "value": tree.node(o).value,
                "prob": 1.0 / s_count as f64,
            }));
            origin.push(o);
        }
    }
    let mut branching = vec![1usize; n_stages - 1];
    branching[0] = s_count;
    let doc = serde_json::json!({
        "grid": serde_json::to_value(&tree.grid).unwrap(),
        "nodes": nodes,
        "branching": branching,
    });
    let expanded = ScenarioTree::from_json(doc.to_string().as_bytes()).unwrap();
    (expanded, origin)
}

/// The node-indexed build must equal a scenario-path build where
/// indistinguishable (scenario, stage) copies are tied back together by
/// explicit equality constraints: identical optimal objective within 1e-7.
#[test]
fn node_build_equals_path_build_with_explicit_equalities() {
    let mut checked = 0;
    for case in corpus().iter().filter(|c| c.inst.tree.n_leaves() >= 2).take(8) {
        let (expanded, origin) = expand_to_paths(&case.inst.tree);
        let mut demand = DemandLattice::zero(case.inst.net.n_buses(), expanded.n_nodes());
        for b in 0..case.inst.net.n_buses() {
            for (e, &o) in origin.iter().enumerate() {
                demand.s_demand[b * expanded.n_nodes() + e] = case.inst.demand.at(b, o);
            }
        }
        let inst2 = Instance {
            net: case.inst.net.clone(),
            tree: expanded,
            demand,
            cost: case.inst.cost,
            options: case.inst.options,
        };
        let (mut p2, idx2) = build_program(&inst2).unwrap();
        // non-anticipativity: tie every duplicated variable to the first
        // copy of the same original node
        let mut representative: HashMap<_, usize> = HashMap::new();
        for col in 0..idx2.n_vars() {
            let (q, elem, node) = idx2.key(col);
            let key = (q, elem, origin[node]);
            match representative.entry(key) {
                std::collections::hash_map::Entry::Vacant(v) => {
                    v.insert(col);
                }
                std::collections::hash_map::Entry::Occupied(o) => {
                    p2.add_equality(&[(*o.get(), 1.0), (col, -1.0)], 0.0).unwrap();
                }
            }
        }
        // the duplicated build is degenerate; accept the first tolerance at
        // which the interior-point method closes
        let sol2 = [1e-10, 1e-9, 1e-8]
            .iter()
            .map(|&tol| solve_conic(&p2, tol).unwrap())
            .find(|s| s.status == SolveStatus::Optimal)
            .expect("path build must be solvable");
        let val2 = extract_operating_point(&inst2, &idx2, &sol2.x).unwrap().objective;
        let val1 = case.start.objective;
        assert!(
            (val1 - val2).abs() <= 1e-7 * val1.abs().max(1.0),
            "node build {val1} vs path build {val2}"
        );
        checked += 1;
    }
    assert!(checked >= 3, "corpus produced too few multi-scenario instances");
}

/// Along every root-to-leaf path the storage dynamics telescope exactly:
/// terminal minus initial state equals the accumulated charge flow.
#[test]
fn storage_telescoping_along_paths() {
    for case in corpus() {
        let inst = &case.inst;
        let op = &case.outcome.point;
        let grid = inst.grid();
        for leaf in inst.tree.leaves() {
            for b in 1..inst.net.n_buses() {
                let bus = inst.net.bus(b);
                let mut acc = 0.0;
                for &node in &inst.tree.path_from_root(leaf) {
                    let k = op.bn(b, node);
                    let d = grid.delta(inst.tree.node(node).stage);
                    acc += d * (bus.storage.eff_abs * op.p_abs[k]
                        - bus.storage.eff_inj * op.p_inj[k]);
                }
                let x0 = op.x[op.bn(b, inst.tree.root())];
                let xt = op.x_terminal[op.bn(b, leaf)];
                assert!(
                    (xt - x0 - acc).abs() <= 1e-9,
                    "bus {b}, leaf {leaf}: {xt} vs {}",
                    x0 + acc
                );
            }
        }
    }
}

/// Leaves sharing their ancestors up to stage t carry identical values at
/// every stage ≤ t (indistinguishability is structural).
#[test]
fn shared_ancestors_imply_shared_values() {
    for case in corpus() {
        let tree = &case.inst.tree;
        let leaves = tree.leaves();
        for (i, &a) in leaves.iter().enumerate() {
            for &b in &leaves[i + 1..] {
                for t in 0..tree.grid.n_stages() {
                    if tree.ancestor_at(a, t) == tree.ancestor_at(b, t) {
                        for s in 0..=t {
                            assert_eq!(
                                tree.node(tree.ancestor_at(a, s)).value,
                                tree.node(tree.ancestor_at(b, s)).value
                            );
                        }
                    }
                }
            }
        }
    }
}

/// When the a-priori certificate passes on an instance's worst-case bounds,
/// the recovered exact point reproduces the unrestricted relaxation value.
/// Pure-load feeders (no injection capability) always certify.
#[test]
fn a_priori_pass_implies_zero_gap() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xCE27);
    let mut passed = 0;
    for draw in 0..6u64 {
        let n_buses = rng.gen_range(3..=6);
        let mut buses = vec![serde_json::json!({
            "id": 0, "v_min": 1.0, "v_max": 1.0, "peak": 0.0
        })];
        for i in 1..n_buses {
            let parent = rng.gen_range(0..i);
            buses.push(serde_json::json!({
                "id": i, "parent": parent,
                "r": rng.gen_range(0.002..0.006),
                "x": rng.gen_range(0.002..0.006),
                "v_min": 0.81, "v_max": 1.21,
                "peak": rng.gen_range(0.1..0.4),
            }));
        }
        let doc = serde_json::json!({"s_base_mva": 1.0, "v_base_kv": 12.0, "buses": buses});
        let net = radial_sopf::network::load_network(
            doc.to_string().as_bytes(),
            radial_sopf::network::NetworkFormat::Json,
        )
        .unwrap();
        let grid = radial_sopf::scenario::TimeGrid::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let params = radial_sopf::scenario::SdeParams {
            n_paths: 128,
            ..radial_sopf::scenario::SdeParams::reference()
        };
        let tree =
            radial_sopf::scenario::build_scenario_tree(&params, &grid, &[2, 1], draw).unwrap();
        let profile = vec![0.5, 0.6, 0.4];
        let demand = radial_sopf::scenario::residual_demand(&net, &tree, &profile).unwrap();
        let inst = Instance {
            net,
            tree,
            demand,
            cost: radial_sopf::program::CostSpec::reference(),
            options: radial_sopf::program::Options {
                restricted: true,
                ..radial_sopf::program::Options::default()
            },
        };
        let s_bar = default_s_bar(&inst.net, &inst.demand);
        let cert = a_priori_certificate(&inst.net, &s_bar, inst.tree.n_nodes(), true).unwrap();
        assert!(cert.passed(), "pure-load feeder must certify");
        passed += 1;
        let Some((_, outcome)) = common::solve_and_recover(&inst) else {
            continue;
        };
        let mut relaxed = inst.clone();
        relaxed.options.restricted = false;
        let (p, idx) = build_program(&relaxed).unwrap();
        let sol = solve_conic(&p, 1e-10).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let val = extract_operating_point(&relaxed, &idx, &sol.x).unwrap().objective;
        let rel = (val - outcome.point.objective).abs() / val.abs().max(1e-9);
        assert!(rel <= 1e-6, "certified instance has gap {rel:e}");
    }
    assert!(passed >= 3, "only {passed} instances certified");
}
