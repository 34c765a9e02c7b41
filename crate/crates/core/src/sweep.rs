//! Forward-backward sweep: recovers a point satisfying the non-convex
//! voltage-current-flow equality from a restricted-relaxation-feasible point.
//!
//! One pass recomputes, per tree node, the line flows and currents by a
//! backward accumulation over the buses (using the input voltages), then the
//! voltages by a forward propagation from the slack bus. Fixed points satisfy
//! v·I = |S|² exactly; on restricted-feasible starts the iterates are
//! monotone (currents and slack injection fall, voltages and flows rise) and
//! stay feasible, so the sweep converges and never raises the cost.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::check_residuals;
use crate::program::{build_program, evaluate_cost, pack, Instance, OperatingPoint};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("non-positive voltage {v} at bus {bus}, node {node}")]
    NonpositiveVoltage { bus: usize, node: usize, v: f64 },
    #[error("start is not feasible for the restricted relaxation: {0}")]
    NotFeasibleInput(String),
    #[error("monotonicity violated at iteration {iter}: {detail}")]
    MonotonicityViolation { iter: usize, detail: String },
    #[error("no convergence after {iters} iterations (last change {last_change:.3e})")]
    NoConvergence {
        iters: usize,
        last_change: f64,
        last: Box<OperatingPoint>,
    },
    #[error("tolerance {0} outside (0, 1e-4]")]
    BadTolerance(f64),
    #[error(transparent)]
    Program(#[from] crate::program::ProgramError),
}

/// The lattices Algorithm transforms; everything else of the operating point
/// is held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepState {
    pub n_buses: usize,
    pub n_lines: usize,
    pub n_nodes: usize,
    /// Per node.
    pub s0: Vec<Complex64>,
    /// Line-major [line * n_nodes + node].
    pub s_flow: Vec<Complex64>,
    pub current: Vec<f64>,
    /// Bus-major [bus * n_nodes + node].
    pub v: Vec<f64>,
}

impl SweepState {
    pub fn from_operating_point(op: &OperatingPoint) -> Self {
        SweepState {
            n_buses: op.n_buses,
            n_lines: op.n_lines,
            n_nodes: op.n_nodes,
            s0: op.s0.clone(),
            s_flow: op.s_flow.clone(),
            current: op.current.clone(),
            v: op.v.clone(),
        }
    }

    fn ln(&self, l: usize, n: usize) -> usize {
        l * self.n_nodes + n
    }

    fn bn(&self, b: usize, n: usize) -> usize {
        b * self.n_nodes + n
    }

    /// Max violation of v·I = |S|² over all (line, node).
    pub fn equality_residual(&self, inst: &Instance) -> f64 {
        let mut worst = 0.0f64;
        for n in 0..self.n_nodes {
            for (l, line) in inst.net.lines().iter().enumerate() {
                let s = self.s_flow[self.ln(l, n)];
                let gap = self.v[self.bn(line.from, n)] * self.current[self.ln(l, n)]
                    - s.norm_sqr();
                worst = worst.max(gap.abs());
            }
        }
        worst
    }
}

/// Fixed complex injections s = pⁱⁿʲ − pᵃᵇˢ + 𝐢q − sᵈ, bus-major.
pub fn injections(inst: &Instance, op: &OperatingPoint) -> Vec<Complex64> {
    let n_nodes = inst.tree.n_nodes();
    let mut s = vec![Complex64::default(); inst.net.n_buses() * n_nodes];
    for b in 1..inst.net.n_buses() {
        for n in 0..n_nodes {
            let k = b * n_nodes + n;
            s[k] = Complex64::new(op.p_inj[k] - op.p_abs[k], op.q[k]) - inst.demand.at(b, n);
        }
    }
    s
}

/// One exact application of the sweep over every tree node. `s` holds the
/// fixed bus injections. The output depends on the input node values only,
/// so non-anticipativity is preserved.
pub fn forward_backward_pass(
    inst: &Instance,
    s: &[Complex64],
    state: &SweepState,
) -> Result<SweepState, SweepError> {
    let net = &inst.net;
    let n_nodes = state.n_nodes;
    // children before parents / parents before children
    let mut by_depth: Vec<usize> = (0..net.n_buses()).collect();
    by_depth.sort_by_key(|&b| net.depth(b));
    let mut out = state.clone();
    for n in 0..n_nodes {
        for &i in by_depth.iter().rev() {
            if i == 0 {
                continue;
            }
            let l = net.line_of(i).unwrap();
            let mut flow = s[i * n_nodes + n];
            for &k in net.children(i) {
                let lk = net.line_of(k).unwrap();
                flow += out.s_flow[out.ln(lk, n)]
                    - net.line(lk).z() * out.current[out.ln(lk, n)];
            }
            let vi = state.v[state.bn(i, n)];
            if vi <= 0.0 {
                return Err(SweepError::NonpositiveVoltage { bus: i, node: n, v: vi });
            }
            let k = out.ln(l, n);
            out.s_flow[k] = flow;
            out.current[k] = flow.norm_sqr() / vi;
        }
        let mut s0 = Complex64::default();
        for &k in net.children(0) {
            let lk = net.line_of(k).unwrap();
            s0 -= out.s_flow[out.ln(lk, n)] - net.line(lk).z() * out.current[out.ln(lk, n)];
        }
        out.s0[n] = s0;
        let k0 = out.bn(0, n);
        out.v[k0] = 1.0;
        for &i in &by_depth {
            if i == 0 {
                continue;
            }
            let l = net.line_of(i).unwrap();
            let line = net.line(l);
            let z = line.z();
            let sp = out.s_flow[out.ln(l, n)];
            let vj = out.v[out.bn(line.to, n)];
            let ki = out.bn(i, n);
            out.v[ki] = net.tap_sq(line.to) * vj
                + 2.0 * (z.conj() * sp).re
                - z.norm_sqr() * out.current[out.ln(l, n)];
        }
    }
    Ok(out)
}

/// One row of the iteration log. The monotone columns record the worst move
/// in the forbidden direction (increase of I, decrease of v or S, increase
/// of s₀); clean runs keep them at numerical-noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub max_di: f64,
    pub max_dv: f64,
    pub max_ds: f64,
    pub max_ds0: f64,
    pub max_change: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct RecoveryOutcome {
    pub point: OperatingPoint,
    pub iterations: usize,
    pub log: Vec<LogRow>,
    /// Set when the start carried no linearized block: the monotone
    /// convergence guarantees do not apply, only the fixed-point property.
    pub heuristic: bool,
}

const MONOTONE_SLACK: f64 = 1e-8;
const START_FEASIBILITY: f64 = 1e-7;

fn monotone_row(iter: usize, prev: &SweepState, next: &SweepState) -> LogRow {
    let mut row = LogRow {
        iter,
        max_di: 0.0,
        max_dv: 0.0,
        max_ds: 0.0,
        max_ds0: 0.0,
        max_change: 0.0,
        residual: 0.0,
    };
    for (a, b) in prev.current.iter().zip(&next.current) {
        row.max_di = row.max_di.max(b - a);
        row.max_change = row.max_change.max((b - a).abs());
    }
    for (a, b) in prev.v.iter().zip(&next.v) {
        row.max_dv = row.max_dv.max(a - b);
        row.max_change = row.max_change.max((b - a).abs());
    }
    for (a, b) in prev.s_flow.iter().zip(&next.s_flow) {
        row.max_ds = row.max_ds.max(a.re - b.re).max(a.im - b.im);
        row.max_change = row
            .max_change
            .max((b.re - a.re).abs())
            .max((b.im - a.im).abs());
    }
    for (a, b) in prev.s0.iter().zip(&next.s0) {
        row.max_ds0 = row.max_ds0.max(b.re - a.re).max(b.im - a.im);
        row.max_change = row
            .max_change
            .max((b.re - a.re).abs())
            .max((b.im - a.im).abs());
    }
    row
}

fn apply_state(start: &OperatingPoint, state: &SweepState, inst: &Instance) -> OperatingPoint {
    let mut op = start.clone();
    op.s0 = state.s0.clone();
    op.s_flow = state.s_flow.clone();
    op.current = state.current.clone();
    op.v = state.v.clone();
    for n in 0..op.n_nodes {
        op.p0_plus[n] = op.s0[n].re.max(0.0);
        op.p0_minus[n] = (-op.s0[n].re).max(0.0);
    }
    op.objective = evaluate_cost(inst, &op);
    op
}

/// Iterates the sweep from `start` until the node-wise change drops below
/// `tol`. The start must satisfy the instance's program within 1e-7.
pub fn recover_feasible_point(
    inst: &Instance,
    start: &OperatingPoint,
    tol: f64,
    max_iter: usize,
) -> Result<RecoveryOutcome, SweepError> {
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(SweepError::BadTolerance(tol));
    }
    let (program, idx) = build_program(inst)?;
    let report = check_residuals(&program, &pack(inst, &idx, start))
        .map_err(crate::program::ProgramError::from)?;
    if report.max_violation > START_FEASIBILITY {
        return Err(SweepError::NotFeasibleInput(format!(
            "max constraint violation {:.3e}",
            report.max_violation
        )));
    }
    let s = injections(inst, start);
    let mut state = SweepState::from_operating_point(start);
    let mut log = Vec::new();
    for iter in 1..=max_iter {
        let next = forward_backward_pass(inst, &s, &state)?;
        let mut row = monotone_row(iter, &state, &next);
        row.residual = next.equality_residual(inst);
        let worst_monotone = row.max_di.max(row.max_dv).max(row.max_ds).max(row.max_ds0);
        if worst_monotone > MONOTONE_SLACK {
            return Err(SweepError::MonotonicityViolation {
                iter,
                detail: format!(
                    "dI+ {:.3e}, dv- {:.3e}, dS- {:.3e}, ds0+ {:.3e}",
                    row.max_di, row.max_dv, row.max_ds, row.max_ds0
                ),
            });
        }
        log.push(row);
        let change = row.max_change;
        state = next;
        if change < tol {
            return Ok(RecoveryOutcome {
                point: apply_state(start, &state, inst),
                iterations: iter,
                log,
                heuristic: !inst.options.restricted,
            });
        }
    }
    Err(SweepError::NoConvergence {
        iters: max_iter,
        last_change: log.last().map(|r| r.max_change).unwrap_or(f64::NAN),
        last: Box::new(apply_state(start, &state, inst)),
    })
}

/// Writes the iteration log as CSV.
pub fn write_log_csv<W: Write>(log: &[LogRow], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["iter", "max_di", "max_dv", "max_ds", "max_ds0", "max_change", "residual"])?;
    for r in log {
        wtr.write_record(&[
            r.iter.to_string(),
            format!("{}", r.max_di),
            format!("{}", r.max_dv),
            format!("{}", r.max_ds),
            format!("{}", r.max_ds0),
            format!("{}", r.max_change),
            format!("{}", r.residual),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{solve_conic, SolveStatus};
    use crate::program::tests::chain_instance;
    use crate::program::extract_operating_point;

    /// Two-bus chain with z = 0.01 + 0.01i and pure unit load at bus 1.
    fn toy() -> Instance {
        let mut inst = chain_instance(2, 0.01, 0.01, 0.6);
        inst.options.restricted = true;
        for n in 0..inst.tree.n_nodes() {
            let k = inst.demand.n_nodes + n; // bus 1 row
            inst.demand.s_demand[k] = Complex64::new(1.0, 0.0);
            inst.demand.s_cons[k] = Complex64::new(1.0, 0.0);
            inst.demand.p_sol[k] = 0.0;
        }
        inst
    }

    /// Operating point of the toy with given (current, v1); flows, voltages
    /// and the lin block filled in consistently.
    fn toy_point(inst: &Instance, current: f64, v1: f64) -> OperatingPoint {
        let mut op = OperatingPoint::zero(2, 1, inst.tree.n_nodes(), true);
        let z = inst.net.line(0).z();
        for n in 0..op.n_nodes {
            let (k0, k1, kl) = (op.bn(0, n), op.bn(1, n), op.ln(0, n));
            op.v[k0] = 1.0;
            op.v[k1] = v1;
            op.s_flow[kl] = Complex64::new(-1.0, 0.0);
            op.current[kl] = current;
            op.s0[n] = Complex64::new(1.0, 0.0) + z * current;
            op.p0_plus[n] = op.s0[n].re;
            if let Some(vl) = op.v_lin.as_mut() {
                vl[n] = 1.0; // bus 0
                vl[op.n_nodes + n] = 1.0 - 2.0 * z.re; // bus 1: 1 + 2 Re(z* S)
            }
            if let Some(sl) = op.s_lin.as_mut() {
                sl[n] = Complex64::new(-1.0, 0.0);
            }
            if let Some(s0l) = op.s0_lin.as_mut() {
                s0l[n] = Complex64::new(1.0, 0.0);
            }
        }
        op.objective = evaluate_cost(inst, &op);
        op
    }

    /// Smaller root of 0.0002 I² − 0.98 I + 1 = 0, the toy's fixed point.
    fn toy_fixed_current() -> f64 {
        let (a, b, c) = (0.0002f64, -0.98f64, 1.0f64);
        (-b - (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
    }

    #[test]
    fn single_pass_matches_hand_evaluation() {
        let inst = toy();
        let start = toy_point(&inst, 1.1, 0.97978);
        let s = injections(&inst, &start);
        for n in 0..inst.tree.n_nodes() {
            assert!((s[inst.tree.n_nodes() + n] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        }
        let out = forward_backward_pass(&inst, &s, &SweepState::from_operating_point(&start))
            .unwrap();
        for n in 0..inst.tree.n_nodes() {
            assert!((out.s_flow[out.ln(0, n)] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
            assert!((out.current[out.ln(0, n)] - 1.0 / 0.97978).abs() < 1e-9);
            let i_new = 1.0 / 0.97978;
            let v_expect = 1.0 - 0.02 - 0.0002 * i_new;
            assert!((out.v[out.bn(1, n)] - v_expect).abs() < 1e-12);
            let s0_expect = Complex64::new(1.0 + 0.01 * i_new, 0.01 * i_new);
            assert!((out.s0[n] - s0_expect).norm() < 1e-12, "{}", out.s0[n]);
        }
    }

    #[test]
    fn fixed_point_is_preserved() {
        let inst = toy();
        let i_star = toy_fixed_current();
        let v_star = 0.98 - 0.0002 * i_star;
        let start = toy_point(&inst, i_star, v_star);
        let s = injections(&inst, &start);
        let state = SweepState::from_operating_point(&start);
        let out = forward_backward_pass(&inst, &s, &state).unwrap();
        let row = monotone_row(1, &state, &out);
        assert!(row.max_change < 1e-12, "change {}", row.max_change);
        assert!(out.equality_residual(&inst) < 1e-12);
    }

    #[test]
    fn dead_network_is_inert() {
        let mut inst = chain_instance(3, 0.02, 0.01, 0.0);
        inst.options.restricted = false;
        for d in inst.demand.s_demand.iter_mut() {
            *d = Complex64::default();
        }
        let mut op = OperatingPoint::zero(3, 2, inst.tree.n_nodes(), false);
        op.v.fill(1.0);
        let s = injections(&inst, &op);
        let state = SweepState::from_operating_point(&op);
        let out = forward_backward_pass(&inst, &s, &state).unwrap();
        assert_eq!(out, state);
        assert!(out.s0.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn nonpositive_voltage_rejected() {
        let inst = toy();
        let mut start = toy_point(&inst, 1.1, 0.97978);
        let k = start.bn(1, 0);
        start.v[k] = 0.0;
        let s = injections(&inst, &start);
        assert!(matches!(
            forward_backward_pass(&inst, &s, &SweepState::from_operating_point(&start)),
            Err(SweepError::NonpositiveVoltage { bus: 1, node: 0, .. })
        ));
    }

    #[test]
    fn recovery_converges_to_quadratic_root() {
        let inst = toy();
        let start = toy_point(&inst, 1.1, 0.97978);
        let outcome = recover_feasible_point(&inst, &start, 1e-12, 500).unwrap();
        assert!(!outcome.heuristic);
        let i_star = toy_fixed_current();
        let v_star = 0.98 - 0.0002 * i_star;
        for n in 0..inst.tree.n_nodes() {
            let op = &outcome.point;
            assert!((op.current[op.ln(0, n)] - i_star).abs() < 1e-9);
            assert!((op.v[op.bn(1, n)] - v_star).abs() < 1e-9);
        }
        // monotone log clean and final residual closed
        for row in &outcome.log {
            assert!(row.max_di <= 1e-10 && row.max_dv <= 1e-10);
            assert!(row.max_ds <= 1e-10 && row.max_ds0 <= 1e-10);
        }
        assert!(outcome.log.last().unwrap().residual < 1e-10);
        // currents fell, voltages rose, cost did not increase
        assert!(outcome.point.objective <= start.objective + 1e-9);
    }

    #[test]
    fn fixed_point_start_returns_immediately() {
        let inst = toy();
        let i_star = toy_fixed_current();
        let start = toy_point(&inst, i_star, 0.98 - 0.0002 * i_star);
        let outcome = recover_feasible_point(&inst, &start, 1e-10, 500).unwrap();
        assert_eq!(outcome.iterations, 1);
        for (a, b) in outcome.point.current.iter().zip(&start.current) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_start_rejected() {
        let inst = toy();
        let mut start = toy_point(&inst, 1.1, 0.97978);
        let k = start.bn(1, 0);
        start.v[k] = 0.5; // violates the propagation equality
        assert!(matches!(
            recover_feasible_point(&inst, &start, 1e-10, 500),
            Err(SweepError::NotFeasibleInput(_))
        ));
        assert!(matches!(
            recover_feasible_point(&inst, &toy_point(&inst, 1.1, 0.97978), 1.0, 500),
            Err(SweepError::BadTolerance(_))
        ));
    }

    #[test]
    fn no_convergence_reports_last_state() {
        let inst = toy();
        let start = toy_point(&inst, 1.1, 0.97978);
        match recover_feasible_point(&inst, &start, 1e-12, 2) {
            Err(SweepError::NoConvergence { iters: 2, last, .. }) => {
                // the partial iterate has already moved off the start
                assert!((last.current[0] - 1.1).abs() > 1e-3);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn recovery_from_solver_optimum_keeps_cost() {
        let mut inst = chain_instance(4, 0.01, 0.008, 0.6);
        inst.options.restricted = true;
        let (p, idx) = build_program(&inst).unwrap();
        let sol = solve_conic(&p, 1e-10).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let start = extract_operating_point(&inst, &idx, &sol.x).unwrap();
        let outcome = recover_feasible_point(&inst, &start, 1e-10, 500).unwrap();
        let op = &outcome.point;
        // exact physics at the recovered point
        for n in 0..op.n_nodes {
            for (l, line) in inst.net.lines().iter().enumerate() {
                let s = op.s_flow[op.ln(l, n)];
                let gap = op.v[op.bn(line.from, n)] * op.current[op.ln(l, n)] - s.norm_sqr();
                assert!(gap.abs() <= 1e-9, "cone gap {gap}");
                // flow magnitudes only shrink along the sweep
                assert!(s.norm() <= start.s_flow[op.ln(l, n)].norm() + 1e-9);
            }
        }
        let rel = (op.objective - sol.objective).abs() / sol.objective.abs().max(1.0);
        assert!(rel < 1e-6, "relative cost drift {rel}");
        assert!(op.objective <= start.objective + 1e-9);
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let inst = toy();
        let start = toy_point(&inst, 1.1, 0.97978);
        let outcome = recover_feasible_point(&inst, &start, 1e-12, 500).unwrap();
        let mut buf = Vec::new();
        write_log_csv(&outcome.log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,max_di,max_dv,max_ds,max_ds0,max_change,residual"));
        assert_eq!(text.trim_end().lines().count(), outcome.log.len() + 1);
    }
}
