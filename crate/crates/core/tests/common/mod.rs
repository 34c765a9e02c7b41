//! Shared corpus of randomized restricted-feasible instances for the
//! integration suites. Built once per test binary.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radial_sopf::conic::{solve_conic, SolveStatus};
use radial_sopf::network::{load_network, NetworkFormat, RadialNetwork};
use radial_sopf::program::{
    build_program, extract_operating_point, CostSpec, Instance, OperatingPoint, Options,
};
use radial_sopf::scenario::{build_scenario_tree, residual_demand, SdeParams, TimeGrid};
use radial_sopf::sweep::{recover_feasible_point, RecoveryOutcome};

pub struct Case {
    pub inst: Instance,
    pub start: OperatingPoint,
    pub outcome: RecoveryOutcome,
}

/// Random radial feeder: loads at every non-slack bus, small storage and
/// reactive flexibility, no solar. Pure-load feeders keep the restricted
/// relaxation feasible for any profile.
pub fn random_network(rng: &mut ChaCha8Rng, n_buses: usize) -> RadialNetwork {
    let mut buses = vec![serde_json::json!({
        "id": 0, "v_min": 1.0, "v_max": 1.0, "peak": 0.0
    })];
    for i in 1..n_buses {
        let parent = rng.gen_range(0..i);
        let cap_max: f64 = rng.gen_range(0.0..0.2);
        buses.push(serde_json::json!({
            "id": i,
            "parent": parent,
            "r": rng.gen_range(0.002..0.005),
            "x": rng.gen_range(0.002..0.005),
            "v_min": 0.81,
            "v_max": 1.21,
            "peak": rng.gen_range(0.05..0.15),
            "storage": {
                "cap_max": cap_max,
                "cap_min": 0.0,
                "x_init": rng.gen_range(0.0..=cap_max),
                "p_inj_max": rng.gen_range(0.0..0.08),
                "p_abs_max": rng.gen_range(0.0..0.08),
                "eff_abs": rng.gen_range(0.9..1.0),
                "eff_inj": rng.gen_range(1.0..1.1),
            },
            "reactive": {
                "q_min": -rng.gen_range(0.0..0.05),
                "q_max": rng.gen_range(0.0..0.05),
            },
        }));
    }
    let doc = serde_json::json!({"s_base_mva": 1.0, "v_base_kv": 12.0, "buses": buses});
    load_network(doc.to_string().as_bytes(), NetworkFormat::Json).unwrap()
}

pub fn random_instance(rng: &mut ChaCha8Rng, seed: u64) -> Instance {
    let n_buses = rng.gen_range(3..=10);
    let net = random_network(rng, n_buses);
    let n_stages = rng.gen_range(2..=4);
    let mut taus = vec![0.0];
    for _ in 0..n_stages {
        taus.push(taus.last().unwrap() + rng.gen_range(0.5..2.0));
    }
    let branching: Vec<usize> = loop {
        let b: Vec<usize> = (0..n_stages - 1).map(|_| rng.gen_range(1..=4)).collect();
        if b.iter().product::<usize>() <= 4 {
            break b;
        }
    };
    let grid = TimeGrid::new(taus).unwrap();
    let params = SdeParams {
        n_paths: 128,
        ..SdeParams::reference()
    };
    let tree = build_scenario_tree(&params, &grid, &branching, seed).unwrap();
    let profile: Vec<f64> = (0..n_stages).map(|_| rng.gen_range(0.2..0.8)).collect();
    let demand = residual_demand(&net, &tree, &profile).unwrap();
    Instance {
        net,
        tree,
        demand,
        cost: CostSpec::reference(),
        options: Options {
            restricted: true,
            ..Options::default()
        },
    }
}

/// Solves the restricted relaxation to high accuracy and sweeps from the
/// optimum. Returns None when the interior-point solve does not reach the
/// accuracy the monotone suite needs; `corpus` re-draws such instances.
pub fn solve_and_recover(inst: &Instance) -> Option<(OperatingPoint, RecoveryOutcome)> {
    let (p, idx) = build_program(inst).unwrap();
    // the monotone suite needs starts accurate to well below its 1e-10
    // slack, so ask the interior-point solver for more than usual
    let sol = [1e-12, 5e-12, 1e-11]
        .iter()
        .map(|&tol| solve_conic(&p, tol).unwrap())
        .find(|s| s.status == SolveStatus::Optimal)?;
    let start = extract_operating_point(inst, &idx, &sol.x).unwrap();
    let outcome = recover_feasible_point(inst, &start, 1e-10, 200).unwrap();
    Some((start, outcome))
}

static CORPUS: OnceLock<Vec<Case>> = OnceLock::new();

/// 100 randomized restricted-feasible instances (3-10 buses, 2-4 stages,
/// 1-4 scenarios), each solved and swept once. Draws whose interior-point
/// solve stalls before the accuracy the suites require are re-drawn
/// deterministically.
pub fn corpus() -> &'static [Case] {
    CORPUS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE97);
        let mut cases = Vec::with_capacity(100);
        let mut draw = 0u64;
        while cases.len() < 100 {
            let inst = random_instance(&mut rng, draw);
            draw += 1;
            if let Some((start, outcome)) = solve_and_recover(&inst) {
                cases.push(Case { inst, start, outcome });
            }
        }
        cases
    })
}
