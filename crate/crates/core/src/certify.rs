//! Exactness certificates: worst-case linearized flows, the a-priori
//! zero-gap conditions, hosting-capacity linear programs and the
//! a-posteriori relative gap bound.
//!
//! All certificate arithmetic is exact on trees (one backward accumulation
//! and one forward propagation); only the capacity maximization delegates to
//! the conic backend, as a pure LP.

use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conic::{solve_conic, ConicError, ConicProgram, SolveStatus};
use crate::network::RadialNetwork;
use crate::scenario::DemandLattice;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("capacity pattern must be nonnegative with at least one positive entry")]
    BadPattern,
    #[error("conditions are violated even at zero capacity")]
    InfeasibleLp,
    #[error("values must be finite, got ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("lattice has {got} entries, expected {expected}")]
    BadLattice { got: usize, expected: usize },
    #[error(transparent)]
    Conic(#[from] ConicError),
}

/// Absolute slack on the exactly-computed condition checks.
pub const CONDITION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    APriori,
    NoReverseFlow,
    CapacityLp,
    APosteriori,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "value")]
pub enum Verdict {
    Pass,
    Fail,
    Threshold(f64),
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionViolation {
    pub condition: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subtree_edge: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bus: Option<usize>,
    pub node: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub verdict: Verdict,
    pub violations: Vec<ConditionViolation>,
    /// Set by the a-priori check: the stronger no-reverse-flow sufficient
    /// condition (worst-case flows nonpositive componentwise).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_reverse_flow: Option<bool>,
    /// Inputs and intermediate values backing the verdict.
    pub provenance: serde_json::Value,
    pub inputs_digest: String,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        matches!(self.verdict, Verdict::Pass | Verdict::Threshold(_))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialization")
    }
}

fn digest_inputs<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("digest serialization");
    let mut h = Sha256::new();
    h.update(&bytes);
    format!("{:x}", h.finalize())
}

/// Worst-case linearized flows and voltages per node.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseFlow {
    pub n_nodes: usize,
    /// Line-major [line * n_nodes + node].
    pub s_lin: Vec<Complex64>,
    /// Bus-major [bus * n_nodes + node].
    pub v_lin: Vec<f64>,
}

/// The paper-style default bound on bus injections:
/// s̄ = p̄ⁱⁿʲ + 𝐢·q̄ − sᵈ per (bus, node).
pub fn default_s_bar(net: &RadialNetwork, demand: &DemandLattice) -> Vec<Complex64> {
    let n_nodes = demand.n_nodes;
    let mut s = vec![Complex64::default(); net.n_buses() * n_nodes];
    for b in 1..net.n_buses() {
        let bus = net.bus(b);
        for n in 0..n_nodes {
            s[b * n_nodes + n] =
                Complex64::new(bus.storage.p_inj_max, bus.reactive.q_max) - demand.at(b, n);
        }
    }
    s
}

/// Solves the worst-case linear-flow system exactly: flows by a backward
/// accumulation over the tree, voltages by a forward propagation (with fixed
/// tap ratios).
pub fn worst_case_linear_flow(
    net: &RadialNetwork,
    s_bar: &[Complex64],
    n_nodes: usize,
) -> Result<WorstCaseFlow, CertifyError> {
    let expected = net.n_buses() * n_nodes;
    if s_bar.len() != expected {
        return Err(CertifyError::BadLattice { got: s_bar.len(), expected });
    }
    let mut by_depth: Vec<usize> = (0..net.n_buses()).collect();
    by_depth.sort_by_key(|&b| net.depth(b));
    let mut s_lin = vec![Complex64::default(); net.n_lines() * n_nodes];
    let mut v_lin = vec![0.0f64; expected];
    for n in 0..n_nodes {
        for &i in by_depth.iter().rev() {
            if i == 0 {
                continue;
            }
            let l = net.line_of(i).unwrap();
            let mut flow = s_bar[i * n_nodes + n];
            for &k in net.children(i) {
                flow += s_lin[net.line_of(k).unwrap() * n_nodes + n];
            }
            s_lin[l * n_nodes + n] = flow;
        }
        v_lin[n] = 1.0; // bus 0
        for &i in &by_depth {
            if i == 0 {
                continue;
            }
            let l = net.line_of(i).unwrap();
            let line = net.line(l);
            let z = line.z();
            v_lin[i * n_nodes + n] = net.tap_sq(line.to) * v_lin[line.to * n_nodes + n]
                + 2.0 * (z.conj() * s_lin[l * n_nodes + n]).re;
        }
    }
    Ok(WorstCaseFlow { n_nodes, s_lin, v_lin })
}

fn condition_violations(
    net: &RadialNetwork,
    wc: &WorstCaseFlow,
    include_outgoing: bool,
) -> Result<Vec<ConditionViolation>, CertifyError> {
    let n_nodes = wc.n_nodes;
    let mut out = Vec::new();
    for n in 0..n_nodes {
        for b in 1..net.n_buses() {
            let excess = wc.v_lin[b * n_nodes + n] - net.bus(b).v_max;
            if excess > CONDITION_SLACK {
                out.push(ConditionViolation {
                    condition: "voltage_bound".into(),
                    line: None,
                    subtree_edge: None,
                    bus: Some(b),
                    node: n,
                    amount: excess,
                });
            }
        }
        for (l, line) in net.lines().iter().enumerate() {
            let edges = net
                .subtree_edges(line.from, include_outgoing)
                .expect("validated network");
            let s = wc.s_lin[l * n_nodes + n];
            for lk in edges {
                let zk = net.line(lk).z();
                let amount = (zk.conj() * s).re;
                if amount > CONDITION_SLACK {
                    out.push(ConditionViolation {
                        condition: "reverse_flow_compensation".into(),
                        line: Some(l),
                        subtree_edge: Some(lk),
                        bus: None,
                        node: n,
                        amount,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// The a-priori zero-gap certificate: both condition families evaluated on
/// the exact worst-case linearized flow, plus the stronger no-reverse-flow
/// sufficient condition.
pub fn a_priori_certificate(
    net: &RadialNetwork,
    s_bar: &[Complex64],
    n_nodes: usize,
    include_outgoing: bool,
) -> Result<Certificate, CertifyError> {
    let wc = worst_case_linear_flow(net, s_bar, n_nodes)?;
    let violations = condition_violations(net, &wc, include_outgoing)?;
    let no_reverse = wc
        .s_lin
        .iter()
        .all(|s| s.re <= CONDITION_SLACK && s.im <= CONDITION_SLACK);
    let digest_src = (
        "a_priori",
        include_outgoing,
        s_bar.iter().map(|s| (s.re, s.im)).collect::<Vec<_>>(),
    );
    Ok(Certificate {
        kind: CertificateKind::APriori,
        verdict: if violations.is_empty() { Verdict::Pass } else { Verdict::Fail },
        violations,
        no_reverse_flow: Some(no_reverse),
        provenance: serde_json::json!({
            "worst_case_v_lin": wc.v_lin,
            "worst_case_s_lin": wc.s_lin.iter().map(|s| [s.re, s.im]).collect::<Vec<_>>(),
            "include_outgoing": include_outgoing,
        }),
        inputs_digest: digest_inputs(&digest_src),
    })
}

/// How the capacity variables enter the hosting LP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    /// One scalar capacity scaling the whole pattern.
    Scaled,
    /// One independent nonnegative capacity per bus with a positive pattern
    /// entry; the objective is their sum.
    Independent,
}

/// Maximizes installed capacity subject to the worst-case-flow system and
/// both a-priori condition families (a pure LP, time-independent).
pub fn max_capacity_lp(
    net: &RadialNetwork,
    pattern: &[f64],
    fixed_injections: &[Complex64],
    mode: CapacityMode,
    include_outgoing: bool,
) -> Result<Certificate, CertifyError> {
    let nb = net.n_buses();
    if pattern.len() != nb {
        return Err(CertifyError::BadLattice { got: pattern.len(), expected: nb });
    }
    if fixed_injections.len() != nb {
        return Err(CertifyError::BadLattice { got: fixed_injections.len(), expected: nb });
    }
    if pattern.iter().any(|&p| p < 0.0) || pattern.iter().all(|&p| p == 0.0) {
        return Err(CertifyError::BadPattern);
    }
    let nl = net.n_lines();
    // columns: capacities, then (Re S, Im S) per line, then v per bus
    let marked: Vec<usize> = (0..nb).filter(|&b| pattern[b] > 0.0).collect();
    let n_caps = match mode {
        CapacityMode::Scaled => 1,
        CapacityMode::Independent => marked.len(),
    };
    let re_s = |l: usize| n_caps + 2 * l;
    let im_s = |l: usize| n_caps + 2 * l + 1;
    let v_of = |b: usize| n_caps + 2 * nl + b;
    let mut p = ConicProgram::new(n_caps + 2 * nl + nb);
    for c in 0..n_caps {
        p.add_objective(c, -1.0); // maximize
        if mode == CapacityMode::Independent {
            p.add_geq(&[(c, 1.0)], 0.0)?;
        }
    }
    let cap_coeff = |b: usize| -> Option<(usize, f64)> {
        match mode {
            CapacityMode::Scaled => (pattern[b] > 0.0).then(|| (0, pattern[b])),
            CapacityMode::Independent => marked
                .iter()
                .position(|&m| m == b)
                .map(|k| (k, pattern[b])),
        }
    };
    // flow accumulation with the capacity term on the active part
    for (l, line) in net.lines().iter().enumerate() {
        let i = line.from;
        let mut re = vec![(re_s(l), 1.0)];
        let mut im = vec![(im_s(l), 1.0)];
        for &k in net.children(i) {
            let lk = net.line_of(k).unwrap();
            re.push((re_s(lk), -1.0));
            im.push((im_s(lk), -1.0));
        }
        if let Some((c, coeff)) = cap_coeff(i) {
            re.push((c, -coeff));
        }
        p.add_equality(&re, fixed_injections[i].re)?;
        p.add_equality(&im, fixed_injections[i].im)?;
    }
    // voltages
    p.add_equality(&[(v_of(0), 1.0)], 1.0)?;
    for (l, line) in net.lines().iter().enumerate() {
        let z = line.z();
        p.add_equality(
            &[
                (v_of(line.from), 1.0),
                (v_of(line.to), -net.tap_sq(line.to)),
                (re_s(l), -2.0 * z.re),
                (im_s(l), -2.0 * z.im),
            ],
            0.0,
        )?;
    }
    for b in 0..nb {
        p.add_leq(&[(v_of(b), 1.0)], net.bus(b).v_max)?;
    }
    for (l, line) in net.lines().iter().enumerate() {
        for lk in net
            .subtree_edges(line.from, include_outgoing)
            .expect("validated network")
        {
            let zk = net.line(lk).z();
            p.add_leq(&[(re_s(l), zk.re), (im_s(l), zk.im)], 0.0)?;
        }
    }
    let sol = solve_conic(&p, 1e-9)?;
    let digest_src = (
        "capacity_lp",
        mode,
        include_outgoing,
        pattern,
        fixed_injections
            .iter()
            .map(|s| (s.re, s.im))
            .collect::<Vec<_>>(),
    );
    let digest = digest_inputs(&digest_src);
    match sol.status {
        SolveStatus::Optimal => {
            let threshold = -sol.objective;
            let allocation: Vec<(usize, f64)> = match mode {
                CapacityMode::Scaled => vec![(usize::MAX, sol.x[0])],
                CapacityMode::Independent => marked
                    .iter()
                    .enumerate()
                    .map(|(k, &b)| (net.original_id(b) as usize, sol.x[k]))
                    .collect(),
            };
            Ok(Certificate {
                kind: CertificateKind::CapacityLp,
                verdict: Verdict::Threshold(threshold),
                violations: Vec::new(),
                no_reverse_flow: None,
                provenance: serde_json::json!({
                    "mode": mode,
                    "allocation": allocation,
                    "include_outgoing": include_outgoing,
                }),
                inputs_digest: digest,
            })
        }
        SolveStatus::Unbounded => Ok(Certificate {
            kind: CertificateKind::CapacityLp,
            verdict: Verdict::Unbounded,
            violations: Vec::new(),
            no_reverse_flow: None,
            provenance: serde_json::json!({ "mode": mode, "include_outgoing": include_outgoing }),
            inputs_digest: digest,
        }),
        SolveStatus::Infeasible | SolveStatus::NumericalLimit => Err(CertifyError::InfeasibleLp),
    }
}

/// A-posteriori relative gap bound between the restricted and plain
/// relaxation values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum GapBound {
    Finite(f64),
    /// Restricted problem infeasible: no finite bound.
    Infinite,
}

/// ε = 2(val(P'_rel) − val(P_rel)) / (|val(P_rel)| + |val(P'_rel)|), clamped
/// at zero when the difference is solver noise below zero; equal-zero values
/// give ε = 0 by convention. `None` for the restricted value means the
/// restricted problem was infeasible.
pub fn relative_gap_bound(
    val_restricted_soc: Option<f64>,
    val_soc: f64,
) -> Result<GapBound, CertifyError> {
    let restricted = match val_restricted_soc {
        None => return Ok(GapBound::Infinite),
        Some(v) => v,
    };
    if !restricted.is_finite() || !val_soc.is_finite() {
        return Err(CertifyError::NonFinite(restricted, val_soc));
    }
    let denom = restricted.abs() + val_soc.abs();
    if denom == 0.0 {
        return Ok(GapBound::Finite(0.0));
    }
    Ok(GapBound::Finite((2.0 * (restricted - val_soc) / denom).max(0.0)))
}

/// Packages a gap bound as a certificate report.
pub fn gap_certificate(
    val_restricted_soc: Option<f64>,
    val_soc: f64,
) -> Result<Certificate, CertifyError> {
    let bound = relative_gap_bound(val_restricted_soc, val_soc)?;
    let verdict = match bound {
        GapBound::Finite(e) => Verdict::Threshold(e),
        GapBound::Infinite => Verdict::Unbounded,
    };
    Ok(Certificate {
        kind: CertificateKind::APosteriori,
        verdict,
        violations: Vec::new(),
        no_reverse_flow: None,
        provenance: serde_json::json!({
            "val_restricted_soc": val_restricted_soc,
            "val_soc": val_soc,
        }),
        inputs_digest: digest_inputs(&("a_posteriori", val_restricted_soc, val_soc)),
    })
}
