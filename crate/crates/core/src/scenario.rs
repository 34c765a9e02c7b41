//! Time grid, clear-sky stochastic model, quantile scenario trees and the
//! residual-demand lattice.
//!
//! The clear-sky index follows a Fisher-Wright-type mean-reverting diffusion
//! with state-dependent volatility; trees quantize its terminal law stage by
//! stage at evenly spaced quantiles, so every leaf carries probability 1/N.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::RadialNetwork;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid time window: t1 = {t1} <= t0 = {t0}")]
    InvalidWindow { t0: f64, t1: f64 },
    #[error("time grid must be strictly increasing with at least two points")]
    BadGrid,
    #[error("branching vector has length {got}, expected {expected}")]
    BadBranching { got: usize, expected: usize },
    #[error("profile has {got} entries, expected {expected}")]
    ProfileLengthMismatch { got: usize, expected: usize },
    #[error("invalid SDE parameters: {0}")]
    BadParams(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Strictly increasing instants τ₀ < … < τ_{T+1} in hours. Stage `t` spans
/// `[taus[t], taus[t+1]]`; there are `T + 1` stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    taus: Vec<f64>,
}

impl TimeGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self, ScenarioError> {
        // w[1] <= w[0] alone would let NaN boundaries through
        if taus.len() < 2 || taus.windows(2).any(|w| w[1] <= w[0] || w[1].is_nan() || w[0].is_nan())
        {
            return Err(ScenarioError::BadGrid);
        }
        Ok(TimeGrid { taus })
    }

    /// Number of stages T + 1.
    pub fn n_stages(&self) -> usize {
        self.taus.len() - 1
    }

    /// Start instant of stage `t`.
    pub fn tau(&self, t: usize) -> f64 {
        self.taus[t]
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Duration Δ_t of stage `t`, hours.
    pub fn delta(&self, t: usize) -> f64 {
        self.taus[t + 1] - self.taus[t]
    }

    /// The paper-style daily grid: 0, 7, 10, 12, 14, 16, 18, 21, 24, 31.
    pub fn daily() -> Self {
        TimeGrid::new(vec![0.0, 7.0, 10.0, 12.0, 14.0, 16.0, 18.0, 21.0, 24.0, 31.0]).unwrap()
    }
}

/// Parameters of the clear-sky index diffusion and of the tree generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeParams {
    /// Reference clear-sky index the process reverts to, in [0, 1].
    pub i_ref: f64,
    /// Mean-reversion speed, 1/hour.
    pub a: f64,
    /// Volatility coefficient.
    pub sigma: f64,
    /// Volatility exponents; both must be >= 0.5 for a strong solution.
    pub alpha: f64,
    pub beta: f64,
    /// Initial index value.
    pub i0: f64,
    /// Euler step, hours.
    pub euler_step: f64,
    /// Simulated paths per tree node.
    pub n_paths: usize,
}

impl SdeParams {
    /// Reference parameter set of the solar irradiance model.
    pub fn reference() -> Self {
        SdeParams {
            i_ref: 0.75,
            a: 0.75,
            sigma: 0.7,
            alpha: 0.8,
            beta: 0.7,
            i0: 0.5,
            euler_step: 0.1,
            n_paths: 10_000,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::BadParams(m.into()));
        if self.a < 0.0 {
            return bad("a must be >= 0");
        }
        if self.alpha < 0.5 || self.beta < 0.5 {
            return bad("alpha and beta must be >= 0.5");
        }
        if !(0.0..=1.0).contains(&self.i_ref) || !(0.0..=1.0).contains(&self.i0) {
            return bad("i_ref and i0 must lie in [0, 1]");
        }
        if self.euler_step <= 0.0 || self.euler_step.is_nan() {
            return bad("euler_step must be positive");
        }
        if self.n_paths == 0 {
            return bad("n_paths must be >= 1");
        }
        Ok(())
    }
}

/// Deterministic clear-sky envelope: zero at night, a raised cosine between
/// 7h and 21h peaking at 14h. Continuous at both boundaries.
pub fn clear_sky_envelope(tau: f64) -> f64 {
    const T_DAY: f64 = 7.0;
    const T_NIGHT: f64 = 21.0;
    let tau = tau.rem_euclid(24.0);
    if !(T_DAY..=T_NIGHT).contains(&tau) {
        return 0.0;
    }
    0.5 - 0.5 * (2.0 * std::f64::consts::PI * (tau - T_NIGHT) / (T_NIGHT - T_DAY)).cos()
}

/// Splittable per-(seed, node, path) stream so results do not depend on how
/// the simulation work is scheduled.
fn path_rng(seed: u64, node: u64, path: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over the concatenated identifiers
    let mut z = seed
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(node.wrapping_mul(0xBF58476D1CE4E5B9))
        .wrapping_add(path.wrapping_mul(0x94D049BB133111EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

fn euler_maruyama_terminal(
    p: &SdeParams,
    start_value: f64,
    t0: f64,
    t1: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut state = start_value.clamp(0.0, 1.0);
    let mut t = t0;
    while t < t1 {
        let dt = p.euler_step.min(t1 - t);
        let drift = -p.a * (state - p.i_ref);
        let vol = p.sigma * state.powf(p.alpha) * (1.0 - state).powf(p.beta);
        let dw: f64 = rng.sample::<f64, _>(rand_distr_standard_normal()) * dt.sqrt();
        state += drift * dt + vol * dw;
        // the exact diffusion stays in [0, 1]; the Euler step does not
        state = state.clamp(0.0, 1.0);
        t += dt;
    }
    state
}

// rand 0.8 ships StandardNormal through rand_distr; a Box-Muller fallback
// keeps the dependency list short.
struct BoxMuller;

impl rand::distributions::Distribution<f64> for BoxMuller {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

fn rand_distr_standard_normal() -> BoxMuller {
    BoxMuller
}

/// Simulates `n` independent terminal values of the clear-sky index over
/// `[t0, t1]` with the Euler scheme, each state clamped to [0, 1].
/// Deterministic given `(seed, node_salt)` regardless of scheduling.
pub fn simulate_clear_sky(
    p: &SdeParams,
    start_value: f64,
    t0: f64,
    t1: f64,
    n: usize,
    seed: u64,
    node_salt: u64,
) -> Result<Vec<f64>, ScenarioError> {
    if t1 <= t0 || t0.is_nan() || t1.is_nan() {
        return Err(ScenarioError::InvalidWindow { t0, t1 });
    }
    p.validate()?;
    Ok((0..n)
        .map(|m| {
            let mut rng = path_rng(seed, node_salt, m as u64);
            euler_maruyama_terminal(p, start_value, t0, t1, &mut rng)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub stage: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    /// Clear-sky index at τ_stage.
    pub value: f64,
    /// Probability of reaching this node.
    pub prob: f64,
}

/// Node-indexed scenario tree. Stage-t nodes carry the index value at τ_t;
/// non-anticipativity is structural: one variable per node, never per
/// (scenario, stage) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub grid: TimeGrid,
    nodes: Vec<TreeNode>,
    branching: Vec<usize>,
    #[serde(skip)]
    children: Vec<Vec<usize>>,
}

impl ScenarioTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn branching(&self) -> &[usize] {
        &self.branching
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn leaves(&self) -> Vec<usize> {
        let last = self.grid.n_stages() - 1;
        self.nodes
            .iter()
            .filter(|n| n.stage == last)
            .map(|n| n.id)
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.branching.iter().product()
    }

    /// Ancestor of `node` at `stage` (or `node` itself).
    pub fn ancestor_at(&self, node: usize, stage: usize) -> usize {
        let mut cur = node;
        while self.nodes[cur].stage > stage {
            cur = self.nodes[cur].parent.unwrap();
        }
        cur
    }

    /// Root-to-node path, root first.
    pub fn path_from_root(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    fn rebuild_children(&mut self) {
        let mut children = vec![Vec::new(); self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = n.parent {
                children[p].push(n.id);
            }
        }
        self.children = children;
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<(), ScenarioError> {
        serde_json::to_writer_pretty(w, self).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn from_json<R: Read>(r: R) -> Result<Self, ScenarioError> {
        let mut tree: ScenarioTree =
            serde_json::from_reader(r).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        tree.rebuild_children();
        Ok(tree)
    }
}

/// Nearest-rank empirical quantile at fraction `q` of a sorted sample.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let rank = (q * m as f64).ceil() as usize;
    sorted[rank.clamp(1, m) - 1]
}

/// Builds the quantile scenario tree: the root carries `i0`; the `C` children
/// of a stage-(t-1) node take the empirical quantiles at 100(2i-1)/(2C) % of
/// `n_paths` simulated terminal values over [τ_{t-1}, τ_t].
pub fn build_scenario_tree(
    p: &SdeParams,
    grid: &TimeGrid,
    branching: &[usize],
    seed: u64,
) -> Result<ScenarioTree, ScenarioError> {
    p.validate()?;
    let t_stages = grid.n_stages();
    if branching.len() != t_stages - 1 {
        return Err(ScenarioError::BadBranching {
            got: branching.len(),
            expected: t_stages - 1,
        });
    }
    if branching.contains(&0) {
        return Err(ScenarioError::BadParams("branching factors must be >= 1".into()));
    }
    let mut nodes = vec![TreeNode {
        id: 0,
        stage: 0,
        parent: None,
        value: p.i0.clamp(0.0, 1.0),
        prob: 1.0,
    }];
    let mut frontier = vec![0usize];
    for t in 1..t_stages {
        let c = branching[t - 1];
        let mut next = Vec::new();
        for &parent in &frontier {
            let start = nodes[parent].value;
            let mut samples = simulate_clear_sky(
                p,
                start,
                grid.tau(t - 1),
                grid.tau(t),
                p.n_paths,
                seed,
                parent as u64,
            )?;
            samples.sort_by(f64::total_cmp);
            for i in 1..=c {
                let q = (2 * i - 1) as f64 / (2 * c) as f64;
                let id = nodes.len();
                nodes.push(TreeNode {
                    id,
                    stage: t,
                    parent: Some(parent),
                    value: nearest_rank(&samples, q),
                    prob: nodes[parent].prob / c as f64,
                });
                next.push(id);
            }
        }
        frontier = next;
    }
    let mut tree = ScenarioTree {
        grid: grid.clone(),
        nodes,
        branching: branching.to_vec(),
        children: Vec::new(),
    };
    tree.rebuild_children();
    Ok(tree)
}

/// Residual demand sᵈ = sᶜᵒⁿˢ − pˢᵒˡ per (bus, tree node), MVA.
#[derive(Debug, Clone)]
pub struct DemandLattice {
    pub n_buses: usize,
    pub n_nodes: usize,
    /// Row-major [bus × node].
    pub s_demand: Vec<Complex64>,
    pub s_cons: Vec<Complex64>,
    pub p_sol: Vec<f64>,
}

impl DemandLattice {
    pub fn zero(n_buses: usize, n_nodes: usize) -> Self {
        DemandLattice {
            n_buses,
            n_nodes,
            s_demand: vec![Complex64::default(); n_buses * n_nodes],
            s_cons: vec![Complex64::default(); n_buses * n_nodes],
            p_sol: vec![0.0; n_buses * n_nodes],
        }
    }

    pub fn at(&self, bus: usize, node: usize) -> Complex64 {
        self.s_demand[bus * self.n_nodes + node]
    }
}

/// Fixed power factor of the consumption profile: (1 + 0.2i)/√1.04.
pub fn consumption_phasor() -> Complex64 {
    Complex64::new(1.0, 0.2) / (1.0 + 0.04f64).sqrt()
}

/// Assembles the residual-demand lattice from the per-stage reference
/// consumption profile and the tree's clear-sky values.
pub fn residual_demand(
    net: &RadialNetwork,
    tree: &ScenarioTree,
    profile: &[f64],
) -> Result<DemandLattice, ScenarioError> {
    let n_stages = tree.grid.n_stages();
    if profile.len() != n_stages {
        return Err(ScenarioError::ProfileLengthMismatch {
            got: profile.len(),
            expected: n_stages,
        });
    }
    let n_buses = net.n_buses();
    let n_nodes = tree.n_nodes();
    let phasor = consumption_phasor();
    let mut lattice = DemandLattice::zero(n_buses, n_nodes);
    for node in tree.nodes() {
        let env = clear_sky_envelope(tree.grid.tau(node.stage));
        for bus in net.buses() {
            if bus.parent.is_none() {
                continue; // slack carries no demand
            }
            let k = bus.id * n_nodes + node.id;
            let cons = profile[node.stage] * phasor * bus.peak;
            let sol = bus.solar_cap * node.value * env;
            lattice.s_cons[k] = cons;
            lattice.p_sol[k] = sol;
            lattice.s_demand[k] = cons - Complex64::new(sol, 0.0);
        }
    }
    Ok(lattice)
}
