//! Assembly of the relaxed and restricted multistage programs as conic
//! programs over tree-node-indexed variables.
//!
//! One variable per (quantity, element, tree node): non-anticipativity is
//! structural rather than enforced by explicit equalities. The restricted
//! variant appends the linearized power-flow block and the reverse-flow
//! compensation inequalities on every subtree edge.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::conic::{ConeKind, ConicError, ConicProgram};
use crate::network::RadialNetwork;
use crate::scenario::{DemandLattice, ScenarioTree, TimeGrid};

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("inconsistent instance: {0}")]
    InconsistentInstance(String),
    #[error("raw vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Conic(#[from] ConicError),
}

/// Prices of the supported cost functional: grid exchange, thermal losses
/// and storage throughput, all per MWh-equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub c0_plus: f64,
    pub c0_minus: f64,
    pub c_loss: f64,
    pub c_bat: f64,
}

impl CostSpec {
    /// Import 1, export 0.5, losses 2, free storage throughput.
    pub fn reference() -> Self {
        CostSpec {
            c0_plus: 1.0,
            c0_minus: 0.5,
            c_loss: 2.0,
            c_bat: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if !(self.c0_plus >= self.c0_minus
            && self.c0_minus >= 0.0
            && self.c_loss >= 0.0
            && self.c_bat >= 0.0)
        {
            return Err(ProgramError::InconsistentInstance(
                "cost prices must satisfy c0_plus >= c0_minus >= 0, c_loss >= 0, c_bat >= 0"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Options {
    /// Append the linearized block and the compensation inequalities.
    pub restricted: bool,
    /// Tie the terminal storage state of every leaf back to the root state.
    pub periodic_storage: bool,
    /// Let each compensation constraint of a line also cover the line's own
    /// outgoing edge (strict subtree when false).
    pub subtree_includes_outgoing: bool,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub net: RadialNetwork,
    pub tree: ScenarioTree,
    pub demand: DemandLattice,
    pub cost: CostSpec,
    pub options: Options,
}

impl Instance {
    pub fn grid(&self) -> &TimeGrid {
        &self.tree.grid
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        self.cost.validate()?;
        if self.demand.n_buses != self.net.n_buses() || self.demand.n_nodes != self.tree.n_nodes()
        {
            return Err(ProgramError::InconsistentInstance(format!(
                "demand lattice is {}x{}, instance needs {}x{}",
                self.demand.n_buses,
                self.demand.n_nodes,
                self.net.n_buses(),
                self.tree.n_nodes()
            )));
        }
        Ok(())
    }
}

/// Physical quantity carried by one column of the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantity {
    /// Slack injection, per node (element 0).
    ReS0,
    ImS0,
    /// Split of Re s₀ into import/export, per node (element 0).
    P0Plus,
    P0Minus,
    /// Per (bus, node).
    PInj,
    PAbs,
    QFlex,
    X,
    V,
    /// Stage-(T+1) storage state, per (bus, leaf).
    XTerminal,
    /// Per (line, node).
    ReS,
    ImS,
    Current,
    /// Linearized block, present iff restricted.
    ReS0Lin,
    ImS0Lin,
    VLin,
    ReSLin,
    ImSLin,
}

/// Bijection (quantity, element, node) ↔ column.
#[derive(Debug, Clone, Default)]
pub struct VariableIndex {
    forward: HashMap<(Quantity, usize, usize), usize>,
    reverse: Vec<(Quantity, usize, usize)>,
}

impl VariableIndex {
    fn push(&mut self, q: Quantity, element: usize, node: usize) -> usize {
        let col = self.reverse.len();
        self.forward.insert((q, element, node), col);
        self.reverse.push((q, element, node));
        col
    }

    pub fn n_vars(&self) -> usize {
        self.reverse.len()
    }

    pub fn try_col(&self, q: Quantity, element: usize, node: usize) -> Option<usize> {
        self.forward.get(&(q, element, node)).copied()
    }

    pub fn col(&self, q: Quantity, element: usize, node: usize) -> usize {
        self.try_col(q, element, node)
            .unwrap_or_else(|| panic!("no column for {q:?} element {element} node {node}"))
    }

    pub fn key(&self, col: usize) -> (Quantity, usize, usize) {
        self.reverse[col]
    }
}

/// Dense per-node view of a solution vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub n_buses: usize,
    pub n_lines: usize,
    pub n_nodes: usize,
    /// Per node.
    pub s0: Vec<Complex64>,
    pub p0_plus: Vec<f64>,
    pub p0_minus: Vec<f64>,
    /// Bus-major [bus * n_nodes + node]; slack entries zero.
    pub p_inj: Vec<f64>,
    pub p_abs: Vec<f64>,
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Terminal storage states; populated on leaves only.
    pub x_terminal: Vec<f64>,
    /// Line-major [line * n_nodes + node].
    pub s_flow: Vec<Complex64>,
    pub current: Vec<f64>,
    /// Linearized block, present iff the program was restricted.
    pub s0_lin: Option<Vec<Complex64>>,
    pub v_lin: Option<Vec<f64>>,
    pub s_lin: Option<Vec<Complex64>>,
    pub objective: f64,
}

impl OperatingPoint {
    pub fn zero(n_buses: usize, n_lines: usize, n_nodes: usize, restricted: bool) -> Self {
        OperatingPoint {
            n_buses,
            n_lines,
            n_nodes,
            s0: vec![Complex64::default(); n_nodes],
            p0_plus: vec![0.0; n_nodes],
            p0_minus: vec![0.0; n_nodes],
            p_inj: vec![0.0; n_buses * n_nodes],
            p_abs: vec![0.0; n_buses * n_nodes],
            q: vec![0.0; n_buses * n_nodes],
            x: vec![0.0; n_buses * n_nodes],
            v: vec![0.0; n_buses * n_nodes],
            x_terminal: vec![0.0; n_buses * n_nodes],
            s_flow: vec![Complex64::default(); n_lines * n_nodes],
            current: vec![0.0; n_lines * n_nodes],
            s0_lin: restricted.then(|| vec![Complex64::default(); n_nodes]),
            v_lin: restricted.then(|| vec![0.0; n_buses * n_nodes]),
            s_lin: restricted.then(|| vec![Complex64::default(); n_lines * n_nodes]),
            objective: 0.0,
        }
    }

    pub fn bn(&self, bus: usize, node: usize) -> usize {
        bus * self.n_nodes + node
    }

    pub fn ln(&self, line: usize, node: usize) -> usize {
        line * self.n_nodes + node
    }
}

fn index_variables(inst: &Instance) -> VariableIndex {
    let net = &inst.net;
    let tree = &inst.tree;
    let last_stage = tree.grid.n_stages() - 1;
    let mut idx = VariableIndex::default();
    for node in tree.nodes() {
        let n = node.id;
        idx.push(Quantity::ReS0, 0, n);
        idx.push(Quantity::ImS0, 0, n);
        idx.push(Quantity::P0Plus, 0, n);
        idx.push(Quantity::P0Minus, 0, n);
        for b in 0..net.n_buses() {
            idx.push(Quantity::V, b, n);
            if b > 0 {
                idx.push(Quantity::PInj, b, n);
                idx.push(Quantity::PAbs, b, n);
                idx.push(Quantity::QFlex, b, n);
                idx.push(Quantity::X, b, n);
                if node.stage == last_stage {
                    idx.push(Quantity::XTerminal, b, n);
                }
            }
        }
        for l in 0..net.n_lines() {
            idx.push(Quantity::ReS, l, n);
            idx.push(Quantity::ImS, l, n);
            idx.push(Quantity::Current, l, n);
        }
        if inst.options.restricted {
            idx.push(Quantity::ReS0Lin, 0, n);
            idx.push(Quantity::ImS0Lin, 0, n);
            for b in 0..net.n_buses() {
                idx.push(Quantity::VLin, b, n);
            }
            for l in 0..net.n_lines() {
                idx.push(Quantity::ReSLin, l, n);
                idx.push(Quantity::ImSLin, l, n);
            }
        }
    }
    idx
}

/// Builds the conic program of the relaxation (restricted when flagged).
pub fn build_program(inst: &Instance) -> Result<(ConicProgram, VariableIndex), ProgramError> {
    inst.validate()?;
    let net = &inst.net;
    let tree = &inst.tree;
    let grid = &tree.grid;
    let idx = index_variables(inst);
    let mut p = ConicProgram::new(idx.n_vars());
    let last_stage = grid.n_stages() - 1;

    // objective: probability- and duration-weighted prices
    for node in tree.nodes() {
        let n = node.id;
        let w = node.prob * grid.delta(node.stage);
        p.add_objective(idx.col(Quantity::P0Plus, 0, n), w * inst.cost.c0_plus);
        p.add_objective(idx.col(Quantity::P0Minus, 0, n), -w * inst.cost.c0_minus);
        for (l, line) in net.lines().iter().enumerate() {
            p.add_objective(idx.col(Quantity::Current, l, n), w * inst.cost.c_loss * line.r);
        }
        if inst.cost.c_bat != 0.0 {
            for b in 1..net.n_buses() {
                p.add_objective(idx.col(Quantity::PInj, b, n), w * inst.cost.c_bat);
                p.add_objective(idx.col(Quantity::PAbs, b, n), w * inst.cost.c_bat);
            }
        }
    }

    for node in tree.nodes() {
        let n = node.id;
        // slack voltage reference and import/export split of Re s0
        p.add_equality(&[(idx.col(Quantity::V, 0, n), 1.0)], 1.0)?;
        p.add_equality(
            &[
                (idx.col(Quantity::ReS0, 0, n), 1.0),
                (idx.col(Quantity::P0Plus, 0, n), -1.0),
                (idx.col(Quantity::P0Minus, 0, n), 1.0),
            ],
            0.0,
        )?;
        p.add_geq(&[(idx.col(Quantity::P0Plus, 0, n), 1.0)], 0.0)?;
        p.add_geq(&[(idx.col(Quantity::P0Minus, 0, n), 1.0)], 0.0)?;

        for b in 1..net.n_buses() {
            let bus = net.bus(b);
            p.add_box(idx.col(Quantity::V, b, n), bus.v_min, bus.v_max)?;
            p.add_box(idx.col(Quantity::PInj, b, n), 0.0, bus.storage.p_inj_max)?;
            p.add_box(idx.col(Quantity::PAbs, b, n), 0.0, bus.storage.p_abs_max)?;
            p.add_box(idx.col(Quantity::QFlex, b, n), bus.reactive.q_min, bus.reactive.q_max)?;
            p.add_box(idx.col(Quantity::X, b, n), bus.storage.cap_min, bus.storage.cap_max)?;
        }

        for (l, line) in net.lines().iter().enumerate() {
            match line.i_max {
                Some(i_max) => p.add_box(idx.col(Quantity::Current, l, n), 0.0, i_max)?,
                None => {
                    p.add_geq(&[(idx.col(Quantity::Current, l, n), 1.0)], 0.0)?;
                }
            }
            if let Some(s_max) = line.s_max {
                p.add_block(
                    ConeKind::Soc,
                    &[
                        (&[][..], s_max),
                        (&[(idx.col(Quantity::ReS, l, n), -1.0)][..], 0.0),
                        (&[(idx.col(Quantity::ImS, l, n), -1.0)][..], 0.0),
                    ],
                )?;
            }
        }

        // storage dynamics along the tree, initial state at the root
        for b in 1..net.n_buses() {
            let st = &net.bus(b).storage;
            if let Some(pa) = node.parent {
                let d = grid.delta(tree.node(pa).stage);
                p.add_equality(
                    &[
                        (idx.col(Quantity::X, b, n), 1.0),
                        (idx.col(Quantity::X, b, pa), -1.0),
                        (idx.col(Quantity::PAbs, b, pa), -st.eff_abs * d),
                        (idx.col(Quantity::PInj, b, pa), st.eff_inj * d),
                    ],
                    0.0,
                )?;
            } else {
                p.add_equality(&[(idx.col(Quantity::X, b, n), 1.0)], st.x_init)?;
            }
            if node.stage == last_stage {
                let d = grid.delta(node.stage);
                p.add_equality(
                    &[
                        (idx.col(Quantity::XTerminal, b, n), 1.0),
                        (idx.col(Quantity::X, b, n), -1.0),
                        (idx.col(Quantity::PAbs, b, n), -st.eff_abs * d),
                        (idx.col(Quantity::PInj, b, n), st.eff_inj * d),
                    ],
                    0.0,
                )?;
                if inst.options.periodic_storage {
                    p.add_equality(
                        &[
                            (idx.col(Quantity::XTerminal, b, n), 1.0),
                            (idx.col(Quantity::X, b, tree.root()), -1.0),
                        ],
                        0.0,
                    )?;
                }
            }
        }

        // power balance at every bus, substituting the injection decomposition
        for (l, line) in net.lines().iter().enumerate() {
            let i = line.from;
            let sd = inst.demand.at(i, n);
            let mut re = vec![
                (idx.col(Quantity::ReS, l, n), 1.0),
                (idx.col(Quantity::PInj, i, n), -1.0),
                (idx.col(Quantity::PAbs, i, n), 1.0),
            ];
            let mut im = vec![
                (idx.col(Quantity::ImS, l, n), 1.0),
                (idx.col(Quantity::QFlex, i, n), -1.0),
            ];
            for &k in net.children(i) {
                let lk = net.line_of(k).unwrap();
                let zk = net.line(lk).z();
                re.push((idx.col(Quantity::ReS, lk, n), -1.0));
                re.push((idx.col(Quantity::Current, lk, n), zk.re));
                im.push((idx.col(Quantity::ImS, lk, n), -1.0));
                im.push((idx.col(Quantity::Current, lk, n), zk.im));
            }
            p.add_equality(&re, -sd.re)?;
            p.add_equality(&im, -sd.im)?;
        }
        let mut re0 = vec![(idx.col(Quantity::ReS0, 0, n), 1.0)];
        let mut im0 = vec![(idx.col(Quantity::ImS0, 0, n), 1.0)];
        for &k in net.children(0) {
            let lk = net.line_of(k).unwrap();
            let zk = net.line(lk).z();
            re0.push((idx.col(Quantity::ReS, lk, n), 1.0));
            re0.push((idx.col(Quantity::Current, lk, n), -zk.re));
            im0.push((idx.col(Quantity::ImS, lk, n), 1.0));
            im0.push((idx.col(Quantity::Current, lk, n), -zk.im));
        }
        p.add_equality(&re0, 0.0)?;
        p.add_equality(&im0, 0.0)?;

        // voltage propagation with fixed tap ratios, and the relaxed cone
        for (l, line) in net.lines().iter().enumerate() {
            let (i, j) = (line.from, line.to);
            let z = line.z();
            p.add_equality(
                &[
                    (idx.col(Quantity::V, i, n), 1.0),
                    (idx.col(Quantity::V, j, n), -net.tap_sq(j)),
                    (idx.col(Quantity::ReS, l, n), -2.0 * z.re),
                    (idx.col(Quantity::ImS, l, n), -2.0 * z.im),
                    (idx.col(Quantity::Current, l, n), z.norm_sqr()),
                ],
                0.0,
            )?;
            p.add_block(
                ConeKind::RotatedSoc,
                &[
                    (&[(idx.col(Quantity::V, i, n), -1.0)][..], 0.0),
                    (&[(idx.col(Quantity::Current, l, n), -0.5)][..], 0.0),
                    (&[(idx.col(Quantity::ReS, l, n), -1.0)][..], 0.0),
                    (&[(idx.col(Quantity::ImS, l, n), -1.0)][..], 0.0),
                ],
            )?;
        }

        if inst.options.restricted {
            build_restricted_block(&mut p, &idx, inst, n)?;
        }
    }
    Ok((p, idx))
}

fn build_restricted_block(
    p: &mut ConicProgram,
    idx: &VariableIndex,
    inst: &Instance,
    n: usize,
) -> Result<(), ProgramError> {
    let net = &inst.net;
    p.add_equality(&[(idx.col(Quantity::VLin, 0, n), 1.0)], 1.0)?;
    for b in 0..net.n_buses() {
        p.add_leq(&[(idx.col(Quantity::VLin, b, n), 1.0)], net.bus(b).v_max)?;
    }
    for (l, line) in net.lines().iter().enumerate() {
        let i = line.from;
        let sd = inst.demand.at(i, n);
        let mut re = vec![
            (idx.col(Quantity::ReSLin, l, n), 1.0),
            (idx.col(Quantity::PInj, i, n), -1.0),
            (idx.col(Quantity::PAbs, i, n), 1.0),
        ];
        let mut im = vec![
            (idx.col(Quantity::ImSLin, l, n), 1.0),
            (idx.col(Quantity::QFlex, i, n), -1.0),
        ];
        for &k in net.children(i) {
            let lk = net.line_of(k).unwrap();
            re.push((idx.col(Quantity::ReSLin, lk, n), -1.0));
            im.push((idx.col(Quantity::ImSLin, lk, n), -1.0));
        }
        p.add_equality(&re, -sd.re)?;
        p.add_equality(&im, -sd.im)?;
    }
    let mut re0 = vec![(idx.col(Quantity::ReS0Lin, 0, n), 1.0)];
    let mut im0 = vec![(idx.col(Quantity::ImS0Lin, 0, n), 1.0)];
    for &k in net.children(0) {
        let lk = net.line_of(k).unwrap();
        re0.push((idx.col(Quantity::ReSLin, lk, n), 1.0));
        im0.push((idx.col(Quantity::ImSLin, lk, n), 1.0));
    }
    p.add_equality(&re0, 0.0)?;
    p.add_equality(&im0, 0.0)?;
    for (l, line) in net.lines().iter().enumerate() {
        let (i, j) = (line.from, line.to);
        let z = line.z();
        p.add_equality(
            &[
                (idx.col(Quantity::VLin, i, n), 1.0),
                (idx.col(Quantity::VLin, j, n), -net.tap_sq(j)),
                (idx.col(Quantity::ReSLin, l, n), -2.0 * z.re),
                (idx.col(Quantity::ImSLin, l, n), -2.0 * z.im),
            ],
            0.0,
        )?;
        // compensation of reverse flows over every edge of the subtree
        let edges = net
            .subtree_edges(i, inst.options.subtree_includes_outgoing)
            .map_err(|e| ProgramError::InconsistentInstance(e.to_string()))?;
        for lk in edges {
            let zk = net.line(lk).z();
            p.add_leq(
                &[
                    (idx.col(Quantity::ReSLin, l, n), zk.re),
                    (idx.col(Quantity::ImSLin, l, n), zk.im),
                ],
                0.0,
            )?;
        }
    }
    Ok(())
}

/// Unpacks a raw solution vector into per-quantity lattices; the objective is
/// recomputed from the cost specification, independently of the solver.
pub fn extract_operating_point(
    inst: &Instance,
    idx: &VariableIndex,
    raw: &[f64],
) -> Result<OperatingPoint, ProgramError> {
    if raw.len() != idx.n_vars() {
        return Err(ProgramError::LengthMismatch {
            got: raw.len(),
            expected: idx.n_vars(),
        });
    }
    let net = &inst.net;
    let n_nodes = inst.tree.n_nodes();
    let mut op = OperatingPoint::zero(
        net.n_buses(),
        net.n_lines(),
        n_nodes,
        inst.options.restricted,
    );
    for (col, &v) in raw.iter().enumerate() {
        let (qty, e, n) = idx.key(col);
        match qty {
            Quantity::ReS0 => op.s0[n].re = v,
            Quantity::ImS0 => op.s0[n].im = v,
            Quantity::P0Plus => op.p0_plus[n] = v,
            Quantity::P0Minus => op.p0_minus[n] = v,
            Quantity::PInj => op.p_inj[e * n_nodes + n] = v,
            Quantity::PAbs => op.p_abs[e * n_nodes + n] = v,
            Quantity::QFlex => op.q[e * n_nodes + n] = v,
            Quantity::X => op.x[e * n_nodes + n] = v,
            Quantity::V => op.v[e * n_nodes + n] = v,
            Quantity::XTerminal => op.x_terminal[e * n_nodes + n] = v,
            Quantity::ReS => op.s_flow[e * n_nodes + n].re = v,
            Quantity::ImS => op.s_flow[e * n_nodes + n].im = v,
            Quantity::Current => op.current[e * n_nodes + n] = v,
            Quantity::ReS0Lin => op.s0_lin.as_mut().unwrap()[n].re = v,
            Quantity::ImS0Lin => op.s0_lin.as_mut().unwrap()[n].im = v,
            Quantity::VLin => op.v_lin.as_mut().unwrap()[e * n_nodes + n] = v,
            Quantity::ReSLin => op.s_lin.as_mut().unwrap()[e * n_nodes + n].re = v,
            Quantity::ImSLin => op.s_lin.as_mut().unwrap()[e * n_nodes + n].im = v,
        }
    }
    op.objective = evaluate_cost(inst, &op);
    Ok(op)
}

/// Inverse of [`extract_operating_point`].
pub fn pack(inst: &Instance, idx: &VariableIndex, op: &OperatingPoint) -> Vec<f64> {
    let n_nodes = inst.tree.n_nodes();
    (0..idx.n_vars())
        .map(|col| {
            let (qty, e, n) = idx.key(col);
            match qty {
                Quantity::ReS0 => op.s0[n].re,
                Quantity::ImS0 => op.s0[n].im,
                Quantity::P0Plus => op.p0_plus[n],
                Quantity::P0Minus => op.p0_minus[n],
                Quantity::PInj => op.p_inj[e * n_nodes + n],
                Quantity::PAbs => op.p_abs[e * n_nodes + n],
                Quantity::QFlex => op.q[e * n_nodes + n],
                Quantity::X => op.x[e * n_nodes + n],
                Quantity::V => op.v[e * n_nodes + n],
                Quantity::XTerminal => op.x_terminal[e * n_nodes + n],
                Quantity::ReS => op.s_flow[e * n_nodes + n].re,
                Quantity::ImS => op.s_flow[e * n_nodes + n].im,
                Quantity::Current => op.current[e * n_nodes + n],
                Quantity::ReS0Lin => op.s0_lin.as_ref().unwrap()[n].re,
                Quantity::ImS0Lin => op.s0_lin.as_ref().unwrap()[n].im,
                Quantity::VLin => op.v_lin.as_ref().unwrap()[e * n_nodes + n],
                Quantity::ReSLin => op.s_lin.as_ref().unwrap()[e * n_nodes + n].re,
                Quantity::ImSLin => op.s_lin.as_ref().unwrap()[e * n_nodes + n].im,
            }
        })
        .collect()
}

/// Expected cost of an operating point, evaluated from the physical
/// quantities (the import/export split is taken from Re s₀, not from the
/// auxiliary split variables).
pub fn evaluate_cost(inst: &Instance, op: &OperatingPoint) -> f64 {
    let grid = inst.grid();
    let mut total = 0.0;
    for node in inst.tree.nodes() {
        let n = node.id;
        let w = node.prob * grid.delta(node.stage);
        let p0 = op.s0[n].re;
        let mut stage_cost =
            inst.cost.c0_plus * p0.max(0.0) - inst.cost.c0_minus * (-p0).max(0.0);
        for (l, line) in inst.net.lines().iter().enumerate() {
            stage_cost += inst.cost.c_loss * line.r * op.current[op.ln(l, n)];
        }
        if inst.cost.c_bat != 0.0 {
            for b in 1..inst.net.n_buses() {
                stage_cost +=
                    inst.cost.c_bat * (op.p_inj[op.bn(b, n)] + op.p_abs[op.bn(b, n)]);
            }
        }
        total += w * stage_cost;
    }
    total
}
