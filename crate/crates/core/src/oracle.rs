//! Ground-truth verifiers: an exact radial load flow written independently
//! of the sweep module, and a full constraint audit of operating points.
//!
//! The load flow iterates the branch-flow recursions to a fixed point from
//! the flat start (v ≡ 1, I ≡ 0) with a recursive tree walk, so agreement
//! with the sweep is a genuine cross-check rather than shared code.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::network::RadialNetwork;
use crate::program::{Instance, OperatingPoint};
use crate::sweep::injections;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone)]
pub struct LoadFlowResult {
    pub converged: bool,
    pub iterations: usize,
    /// Final max change of the voltage lattice between iterations.
    pub residual: f64,
    /// Line-major [line * n_nodes + node].
    pub s_flow: Vec<Complex64>,
    pub current: Vec<f64>,
    /// Bus-major [bus * n_nodes + node].
    pub v: Vec<f64>,
    /// Per node.
    pub s0: Vec<Complex64>,
}

/// Recursively accumulates the flow entering the line above `bus` and the
/// implied squared current, using the voltages of the previous iterate.
#[allow(clippy::too_many_arguments)]
fn branch_flows(
    net: &RadialNetwork,
    s: &[Complex64],
    v: &[f64],
    n_nodes: usize,
    n: usize,
    bus: usize,
    s_flow: &mut [Complex64],
    current: &mut [f64],
) -> Option<Complex64> {
    let mut flow = s[bus * n_nodes + n];
    for &k in net.children(bus) {
        branch_flows(net, s, v, n_nodes, n, k, s_flow, current)?;
        let lk = net.line_of(k).unwrap();
        flow += s_flow[lk * n_nodes + n] - net.line(lk).z() * current[lk * n_nodes + n];
    }
    let l = net.line_of(bus).unwrap();
    let vb = v[bus * n_nodes + n];
    if vb <= 0.0 {
        return None;
    }
    s_flow[l * n_nodes + n] = flow;
    current[l * n_nodes + n] = flow.norm_sqr() / vb;
    Some(flow)
}

fn propagate_voltages(
    net: &RadialNetwork,
    n_nodes: usize,
    n: usize,
    bus: usize,
    s_flow: &[Complex64],
    current: &[f64],
    v: &mut [f64],
) {
    for &k in net.children(bus) {
        let lk = net.line_of(k).unwrap();
        let z = net.line(lk).z();
        v[k * n_nodes + n] = net.tap_sq(bus) * v[bus * n_nodes + n]
            + 2.0 * (z.conj() * s_flow[lk * n_nodes + n]).re
            - z.norm_sqr() * current[lk * n_nodes + n];
        propagate_voltages(net, n_nodes, n, k, s_flow, current, v);
    }
}

/// Solves the exact branch-flow equations per node from the flat start.
/// Divergence (non-positive voltage, or the voltage change growing for ten
/// consecutive iterations) is reported in-band via `converged = false`.
pub fn radial_load_flow(
    net: &RadialNetwork,
    s: &[Complex64],
    n_nodes: usize,
    tol: f64,
    max_iter: usize,
) -> LoadFlowResult {
    let nb = net.n_buses();
    let nl = net.n_lines();
    assert_eq!(s.len(), nb * n_nodes, "injection lattice shape");
    assert!(tol > 0.0 && tol <= 1e-4, "tolerance outside (0, 1e-4]");
    let mut result = LoadFlowResult {
        converged: false,
        iterations: 0,
        residual: f64::NAN,
        s_flow: vec![Complex64::default(); nl * n_nodes],
        current: vec![0.0; nl * n_nodes],
        v: vec![1.0; nb * n_nodes],
        s0: vec![Complex64::default(); n_nodes],
    };
    let mut prev_residual = f64::INFINITY;
    let mut growth_streak = 0usize;
    for iter in 1..=max_iter {
        result.iterations = iter;
        let v_old = result.v.clone();
        let mut ok = true;
        for n in 0..n_nodes {
            for &k in net.children(0) {
                if branch_flows(
                    net,
                    s,
                    &v_old,
                    n_nodes,
                    n,
                    k,
                    &mut result.s_flow,
                    &mut result.current,
                )
                .is_none()
                {
                    ok = false;
                }
            }
            if !ok {
                break;
            }
            let mut s0 = Complex64::default();
            for &k in net.children(0) {
                let lk = net.line_of(k).unwrap();
                s0 -= result.s_flow[lk * n_nodes + n]
                    - net.line(lk).z() * result.current[lk * n_nodes + n];
            }
            result.s0[n] = s0;
            result.v[n] = 1.0; // bus 0
            propagate_voltages(net, n_nodes, n, 0, &result.s_flow, &result.current, &mut result.v);
        }
        if !ok || result.v.iter().any(|&v| v <= 0.0) {
            return result; // voltage collapse
        }
        let residual = result
            .v
            .iter()
            .zip(&v_old)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        result.residual = residual;
        if residual < tol {
            result.converged = true;
            return result;
        }
        if residual > prev_residual {
            growth_streak += 1;
            if growth_streak >= 10 {
                return result;
            }
        } else {
            growth_streak = 0;
        }
        prev_residual = residual;
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    FeasibleForP,
    FeasibleForSocOnly,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyViolation {
    pub family: String,
    pub max: f64,
    /// Arg-max bus or line index.
    pub element: usize,
    pub node: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub classification: Classification,
    pub tol: f64,
    /// Every constraint family with its max violation (zero when satisfied).
    pub families: Vec<FamilyViolation>,
}

impl AuditReport {
    pub fn family(&self, name: &str) -> Option<&FamilyViolation> {
        self.families.iter().find(|f| f.family == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("audit serialization")
    }
}

struct FamilyAcc {
    name: &'static str,
    max: f64,
    element: usize,
    node: usize,
}

impl FamilyAcc {
    fn new(name: &'static str) -> Self {
        FamilyAcc { name, max: 0.0, element: 0, node: 0 }
    }

    fn hit(&mut self, violation: f64, element: usize, node: usize) {
        if violation > self.max {
            self.max = violation;
            self.element = element;
            self.node = node;
        }
    }
}

/// Evaluates every constraint family at the point and classifies it:
/// physically exact, relaxation-feasible only (cone slack on the quadratic
/// equality), or infeasible.
pub fn constraint_violation_report(
    inst: &Instance,
    op: &OperatingPoint,
    tol: f64,
) -> Result<AuditReport, OracleError> {
    let net = &inst.net;
    let tree = &inst.tree;
    let n_nodes = tree.n_nodes();
    if op.n_buses != net.n_buses() || op.n_lines != net.n_lines() || op.n_nodes != n_nodes {
        return Err(OracleError::ShapeMismatch(format!(
            "point is {}x{}x{}, instance needs {}x{}x{}",
            op.n_buses,
            op.n_lines,
            op.n_nodes,
            net.n_buses(),
            net.n_lines(),
            n_nodes
        )));
    }
    let grid = inst.grid();
    let last_stage = grid.n_stages() - 1;
    let s = injections(inst, op);
    let mut slack_v = FamilyAcc::new("slack_voltage");
    let mut v_bounds = FamilyAcc::new("voltage_bounds");
    let mut i_bounds = FamilyAcc::new("current_bounds");
    let mut s_mag = FamilyAcc::new("flow_magnitude");
    let mut p_bounds = FamilyAcc::new("active_power_bounds");
    let mut q_bounds = FamilyAcc::new("reactive_power_bounds");
    let mut x_dyn = FamilyAcc::new("storage_dynamics");
    let mut x_init = FamilyAcc::new("storage_init");
    let mut x_bounds = FamilyAcc::new("storage_bounds");
    let mut balance = FamilyAcc::new("power_balance");
    let mut propagation = FamilyAcc::new("voltage_propagation");
    let mut quad_eq = FamilyAcc::new("quadratic_equality");
    let mut cone = FamilyAcc::new("cone_inequality");
    let mut periodic = FamilyAcc::new("storage_periodicity");
    let mut lin = FamilyAcc::new("linearized_block");
    let mut compensation = FamilyAcc::new("reverse_flow_compensation");

    for node in tree.nodes() {
        let n = node.id;
        slack_v.hit((op.v[op.bn(0, n)] - 1.0).abs(), 0, n);
        for b in 1..net.n_buses() {
            let bus = net.bus(b);
            let k = op.bn(b, n);
            v_bounds.hit((bus.v_min - op.v[k]).max(op.v[k] - bus.v_max), b, n);
            p_bounds.hit(
                (-op.p_inj[k])
                    .max(op.p_inj[k] - bus.storage.p_inj_max)
                    .max(-op.p_abs[k])
                    .max(op.p_abs[k] - bus.storage.p_abs_max),
                b,
                n,
            );
            q_bounds.hit(
                (bus.reactive.q_min - op.q[k]).max(op.q[k] - bus.reactive.q_max),
                b,
                n,
            );
            x_bounds.hit(
                (bus.storage.cap_min - op.x[k]).max(op.x[k] - bus.storage.cap_max),
                b,
                n,
            );
            match node.parent {
                None => x_init.hit((op.x[k] - bus.storage.x_init).abs(), b, n),
                Some(pa) => {
                    let d = grid.delta(tree.node(pa).stage);
                    let kp = op.bn(b, pa);
                    let expect = op.x[kp]
                        + d * (bus.storage.eff_abs * op.p_abs[kp]
                            - bus.storage.eff_inj * op.p_inj[kp]);
                    x_dyn.hit((op.x[k] - expect).abs(), b, n);
                }
            }
            if node.stage == last_stage {
                let d = grid.delta(node.stage);
                let expect = op.x[k]
                    + d * (bus.storage.eff_abs * op.p_abs[k]
                        - bus.storage.eff_inj * op.p_inj[k]);
                x_dyn.hit((op.x_terminal[k] - expect).abs(), b, n);
                if inst.options.periodic_storage {
                    periodic.hit((op.x_terminal[k] - op.x[op.bn(b, tree.root())]).abs(), b, n);
                }
            }
        }
        for (l, line) in net.lines().iter().enumerate() {
            let k = op.ln(l, n);
            let cur = op.current[k];
            i_bounds.hit((-cur).max(line.i_max.map_or(0.0, |m| cur - m)), l, n);
            if let Some(m) = line.s_max {
                s_mag.hit(op.s_flow[k].norm() - m, l, n);
            }
            // balance at the sending bus of the line
            let i = line.from;
            let mut expect = s[i * n_nodes + n];
            for &c in net.children(i) {
                let lc = net.line_of(c).unwrap();
                expect += op.s_flow[op.ln(lc, n)] - net.line(lc).z() * op.current[op.ln(lc, n)];
            }
            balance.hit((op.s_flow[k] - expect).norm(), l, n);
            let z = line.z();
            let drop = net.tap_sq(line.to) * op.v[op.bn(line.to, n)]
                + 2.0 * (z.conj() * op.s_flow[k]).re
                - z.norm_sqr() * cur;
            propagation.hit((op.v[op.bn(i, n)] - drop).abs(), l, n);
            let gap = op.v[op.bn(i, n)] * cur - op.s_flow[k].norm_sqr();
            quad_eq.hit(gap.abs(), l, n);
            cone.hit(-gap, l, n);
        }
        let mut s0 = Complex64::default();
        for &c in net.children(0) {
            let lc = net.line_of(c).unwrap();
            s0 -= op.s_flow[op.ln(lc, n)] - net.line(lc).z() * op.current[op.ln(lc, n)];
        }
        balance.hit((op.s0[n] - s0).norm(), 0, n);

        if let (Some(v_lin), Some(s_lin), Some(s0_lin)) =
            (op.v_lin.as_ref(), op.s_lin.as_ref(), op.s0_lin.as_ref())
        {
            lin.hit((v_lin[op.bn(0, n)] - 1.0).abs(), 0, n);
            for b in 1..net.n_buses() {
                lin.hit(v_lin[op.bn(b, n)] - net.bus(b).v_max, b, n);
            }
            let mut acc0 = Complex64::default();
            for (l, line) in net.lines().iter().enumerate() {
                let i = line.from;
                let mut expect = s[i * n_nodes + n];
                for &c in net.children(i) {
                    expect += s_lin[op.ln(net.line_of(c).unwrap(), n)];
                }
                lin.hit((s_lin[op.ln(l, n)] - expect).norm(), l, n);
                let z = line.z();
                let drop = net.tap_sq(line.to) * v_lin[op.bn(line.to, n)]
                    + 2.0 * (z.conj() * s_lin[op.ln(l, n)]).re;
                lin.hit((v_lin[op.bn(i, n)] - drop).abs(), l, n);
                if line.to == 0 {
                    acc0 += s_lin[op.ln(l, n)];
                }
                let edges = net
                    .subtree_edges(i, inst.options.subtree_includes_outgoing)
                    .expect("validated network");
                for lk in edges {
                    let zk = net.line(lk).z();
                    compensation.hit((zk.conj() * s_lin[op.ln(l, n)]).re, l, n);
                }
            }
            lin.hit((s0_lin[n] + acc0).norm(), 0, n);
        }
    }

    let families: Vec<FamilyViolation> = [
        slack_v, v_bounds, i_bounds, s_mag, p_bounds, q_bounds, x_dyn, x_init, x_bounds,
        balance, propagation, quad_eq, cone, periodic, lin, compensation,
    ]
    .into_iter()
    .map(|f| FamilyViolation {
        family: f.name.to_string(),
        max: f.max.max(0.0),
        element: f.element,
        node: f.node,
    })
    .collect();
    let worst_excl_quad = families
        .iter()
        .filter(|f| f.family != "quadratic_equality")
        .map(|f| f.max)
        .fold(0.0f64, f64::max);
    let quad = families
        .iter()
        .find(|f| f.family == "quadratic_equality")
        .map(|f| f.max)
        .unwrap_or(0.0);
    let classification = if worst_excl_quad <= tol && quad <= tol {
        Classification::FeasibleForP
    } else if worst_excl_quad <= tol {
        Classification::FeasibleForSocOnly
    } else {
        Classification::Infeasible
    };
    Ok(AuditReport { classification, tol, families })
}
