//! Solver-agnostic conic program representation and the interior-point
//! backend behind it.
//!
//! Programs are stored as  min qᵀx + c  s.t.  Ax + s = b,  s ∈ K,  with K a
//! product of zero, nonnegative, second-order and rotated second-order
//! blocks. The rotated cone follows the 2·s₀·s₁ ≥ ‖s₂..‖², s₀, s₁ ≥ 0
//! convention and is lowered to a plain second-order cone by the orthogonal
//! rotation of its first two rows before the backend sees it.

use std::fmt::Write as _;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("tolerance {0} outside (0, 1e-2]")]
    BadTolerance(f64),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    Zero,
    Nonneg,
    Soc,
    RotatedSoc,
}

impl ConeKind {
    fn tag(self) -> &'static str {
        match self {
            ConeKind::Zero => "zero",
            ConeKind::Nonneg => "nonneg",
            ConeKind::Soc => "soc",
            ConeKind::RotatedSoc => "rsoc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub dim: usize,
}

/// Sparse conic program in row-major triplet form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    n_vars: usize,
    /// Linear objective coefficients, dense.
    objective: Vec<f64>,
    /// Constant offset added to the reported objective.
    pub constant: f64,
    /// Per-row sparse coefficients (col, value).
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    blocks: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn new(n_vars: usize) -> Self {
        ConicProgram {
            n_vars,
            objective: vec![0.0; n_vars],
            ..Default::default()
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn blocks(&self) -> &[ConeBlock] {
        &self.blocks
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn add_objective(&mut self, col: usize, coeff: f64) {
        self.objective[col] += coeff;
    }

    fn check_cols(&self, coeffs: &[(usize, f64)]) -> Result<(), ConicError> {
        if let Some(&(c, _)) = coeffs.iter().find(|&&(c, _)| c >= self.n_vars) {
            return Err(ConicError::Dimension(format!(
                "column {c} out of range (n_vars = {})",
                self.n_vars
            )));
        }
        Ok(())
    }

    /// Equality Σ aⱼ xⱼ = rhs; returns the row index.
    pub fn add_equality(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> Result<usize, ConicError> {
        self.add_block(ConeKind::Zero, &[(coeffs, rhs)])
    }

    /// Inequality Σ aⱼ xⱼ ≤ rhs; returns the row index.
    pub fn add_leq(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> Result<usize, ConicError> {
        self.add_block(ConeKind::Nonneg, &[(coeffs, rhs)])
    }

    /// Inequality Σ aⱼ xⱼ ≥ rhs.
    pub fn add_geq(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> Result<usize, ConicError> {
        let neg: Vec<(usize, f64)> = coeffs.iter().map(|&(c, v)| (c, -v)).collect();
        self.add_leq(&neg, -rhs)
    }

    /// lo ≤ x_col ≤ hi as two nonnegative rows.
    pub fn add_box(&mut self, col: usize, lo: f64, hi: f64) -> Result<(), ConicError> {
        self.add_geq(&[(col, 1.0)], lo)?;
        self.add_leq(&[(col, 1.0)], hi)?;
        Ok(())
    }

    /// Appends one cone block; each entry is a row (coefficients, rhs) so the
    /// slack s_i = rhs_i − Σ aᵢⱼ xⱼ stacks into the cone. Returns the index
    /// of the first row.
    pub fn add_block(
        &mut self,
        kind: ConeKind,
        rows: &[(&[(usize, f64)], f64)],
    ) -> Result<usize, ConicError> {
        match kind {
            ConeKind::Soc if rows.len() < 2 => {
                return Err(ConicError::Dimension("soc block needs dim >= 2".into()))
            }
            ConeKind::RotatedSoc if rows.len() < 3 => {
                return Err(ConicError::Dimension("rsoc block needs dim >= 3".into()))
            }
            _ if rows.is_empty() => {
                return Err(ConicError::Dimension("empty cone block".into()))
            }
            _ => {}
        }
        let first = self.rows.len();
        for (coeffs, rhs) in rows {
            self.check_cols(coeffs)?;
            self.rows.push(coeffs.to_vec());
            self.rhs.push(*rhs);
        }
        self.blocks.push(ConeBlock { kind, dim: rows.len() });
        Ok(first)
    }

    /// Slack vector s = b − Ax of the point `x`.
    fn slacks(&self, x: &[f64]) -> Result<Vec<f64>, ConicError> {
        if x.len() != self.n_vars {
            return Err(ConicError::Dimension(format!(
                "point has length {}, program has {} variables",
                x.len(),
                self.n_vars
            )));
        }
        Ok(self
            .rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, &b)| b - row.iter().map(|&(c, a)| a * x[c]).sum::<f64>())
            .collect())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.constant
            + self
                .objective
                .iter()
                .zip(x)
                .map(|(q, xi)| q * xi)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalLimit,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Max violation of the equality rows at x.
    pub primal_residual: f64,
    /// Max cone violation at x.
    pub cone_residual: f64,
    /// Primal-dual objective gap reported by the backend.
    pub gap: f64,
    pub solve_time: f64,
    pub iterations: u32,
}

/// Per-block feasibility report, backend-independent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    /// One entry per cone block: (kind, first row index, violation).
    pub blocks: Vec<(ConeKind, usize, f64)>,
    pub max_violation: f64,
    pub objective: f64,
}

/// Evaluates every cone block at `x` by plain arithmetic. Zero blocks report
/// max |s|, nonnegative blocks max(−s)₊, second-order blocks (‖s₁..‖ − s₀)₊
/// and rotated blocks max((‖s₂..‖² − 2 s₀ s₁)₊, (−s₀)₊, (−s₁)₊).
pub fn check_residuals(p: &ConicProgram, x: &[f64]) -> Result<ResidualReport, ConicError> {
    let s = p.slacks(x)?;
    let mut blocks = Vec::with_capacity(p.blocks.len());
    let mut offset = 0usize;
    let mut max_violation = 0.0f64;
    for b in &p.blocks {
        let sl = &s[offset..offset + b.dim];
        let v = match b.kind {
            ConeKind::Zero => sl.iter().fold(0.0f64, |m, &v| m.max(v.abs())),
            ConeKind::Nonneg => sl.iter().fold(0.0f64, |m, &v| m.max(-v)),
            ConeKind::Soc => {
                let tail = sl[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                tail - sl[0]
            }
            ConeKind::RotatedSoc => {
                let tail = sl[2..].iter().map(|v| v * v).sum::<f64>();
                (tail - 2.0 * sl[0] * sl[1]).max(-sl[0]).max(-sl[1])
            }
        }
        .max(0.0);
        blocks.push((b.kind, offset, v));
        max_violation = max_violation.max(v);
        offset += b.dim;
    }
    Ok(ResidualReport {
        blocks,
        max_violation,
        objective: p.objective_value(x),
    })
}

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

type LoweredRows = Vec<Vec<(usize, f64)>>;

/// Lowers the program to the backend's cone dialect: rotated blocks become
/// plain second-order blocks via (s₀, s₁) → ((s₀+s₁)/√2, (s₀−s₁)/√2).
fn lowered(p: &ConicProgram) -> (LoweredRows, Vec<f64>, Vec<SupportedConeT<f64>>) {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(p.rows.len());
    let mut rhs = Vec::with_capacity(p.rhs.len());
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut offset = 0usize;
    let combine = |a: &[(usize, f64)], b: &[(usize, f64)], sa: f64, sb: f64| {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(a.len() + b.len());
        out.extend(a.iter().map(|&(c, v)| (c, sa * v)));
        for &(c, v) in b {
            match out.iter_mut().find(|(oc, _)| *oc == c) {
                Some(e) => e.1 += sb * v,
                None => out.push((c, sb * v)),
            }
        }
        out.retain(|&(_, v)| v != 0.0);
        out
    };
    for b in &p.blocks {
        let sl_rows = &p.rows[offset..offset + b.dim];
        let sl_rhs = &p.rhs[offset..offset + b.dim];
        match b.kind {
            ConeKind::Zero => {
                rows.extend_from_slice(sl_rows);
                rhs.extend_from_slice(sl_rhs);
                // merge with a preceding zero cone to keep the list short
                if let Some(SupportedConeT::ZeroConeT(d)) = cones.last_mut() {
                    *d += b.dim;
                } else {
                    cones.push(SupportedConeT::ZeroConeT(b.dim));
                }
            }
            ConeKind::Nonneg => {
                rows.extend_from_slice(sl_rows);
                rhs.extend_from_slice(sl_rhs);
                if let Some(SupportedConeT::NonnegativeConeT(d)) = cones.last_mut() {
                    *d += b.dim;
                } else {
                    cones.push(SupportedConeT::NonnegativeConeT(b.dim));
                }
            }
            ConeKind::Soc => {
                rows.extend_from_slice(sl_rows);
                rhs.extend_from_slice(sl_rhs);
                cones.push(SupportedConeT::SecondOrderConeT(b.dim));
            }
            ConeKind::RotatedSoc => {
                rows.push(combine(&sl_rows[0], &sl_rows[1], SQRT_HALF, SQRT_HALF));
                rhs.push(SQRT_HALF * (sl_rhs[0] + sl_rhs[1]));
                rows.push(combine(&sl_rows[0], &sl_rows[1], SQRT_HALF, -SQRT_HALF));
                rhs.push(SQRT_HALF * (sl_rhs[0] - sl_rhs[1]));
                rows.extend_from_slice(&sl_rows[2..]);
                rhs.extend_from_slice(&sl_rhs[2..]);
                cones.push(SupportedConeT::SecondOrderConeT(b.dim));
            }
        }
        offset += b.dim;
    }
    (rows, rhs, cones)
}

fn to_csc(rows: &[Vec<(usize, f64)>], n_rows: usize, n_cols: usize) -> CscMatrix<f64> {
    let mut colptr = vec![0usize; n_cols + 1];
    for row in rows {
        for &(c, _) in row {
            colptr[c + 1] += 1;
        }
    }
    for c in 0..n_cols {
        colptr[c + 1] += colptr[c];
    }
    let nnz = colptr[n_cols];
    let mut rowval = vec![0usize; nnz];
    let mut nzval = vec![0.0f64; nnz];
    let mut cursor = colptr.clone();
    // row-major scan keeps each column's entries sorted by row
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            rowval[cursor[c]] = r;
            nzval[cursor[c]] = v;
            cursor[c] += 1;
        }
    }
    CscMatrix::new(n_rows, n_cols, colptr, rowval, nzval)
}

/// Solves the program with the embedded interior-point backend at tolerance
/// `tol`. Deterministic for a fixed program and tolerance.
pub fn solve_conic(p: &ConicProgram, tol: f64) -> Result<ConicSolution, ConicError> {
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(ConicError::BadTolerance(tol));
    }
    let (rows, rhs, cones) = lowered(p);
    let a = to_csc(&rows, rows.len(), p.n_vars);
    let pmat = CscMatrix::<f64>::zeros((p.n_vars, p.n_vars));
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_feas(tol)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .max_iter(200)
        .build()
        .map_err(|e| ConicError::BackendUnavailable(e.to_string()))?;
    let started = Instant::now();
    let mut solver = DefaultSolver::new(&pmat, &p.objective, &a, &rhs, &cones, settings)
        .map_err(|e| ConicError::BackendUnavailable(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalLimit,
    };
    let x = sol.x.clone();
    let (mut primal_residual, mut cone_residual) = (f64::NAN, f64::NAN);
    if status == SolveStatus::Optimal {
        let report = check_residuals(p, &x)?;
        primal_residual = report
            .blocks
            .iter()
            .filter(|(k, _, _)| *k == ConeKind::Zero)
            .map(|&(_, _, v)| v)
            .fold(0.0, f64::max);
        cone_residual = report
            .blocks
            .iter()
            .filter(|(k, _, _)| *k != ConeKind::Zero)
            .map(|&(_, _, v)| v)
            .fold(0.0, f64::max);
    }
    Ok(ConicSolution {
        status,
        objective: if status == SolveStatus::Optimal {
            p.objective_value(&x)
        } else {
            f64::NAN
        },
        x,
        primal_residual,
        cone_residual,
        gap: (sol.obj_val - sol.obj_val_dual).abs(),
        solve_time: started.elapsed().as_secs_f64(),
        iterations: sol.iterations,
    })
}

/// Emits the documented sparse text format: a header with the variable count
/// and cone list, objective terms, then matrix triplets and right-hand sides.
pub fn emit_text(p: &ConicProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "conic 1");
    let _ = writeln!(out, "vars {}", p.n_vars);
    let _ = writeln!(out, "cones {}", p.blocks.len());
    for b in &p.blocks {
        let _ = writeln!(out, "cone {} {}", b.kind.tag(), b.dim);
    }
    let _ = writeln!(out, "obj {}", fmt(p.constant));
    for (c, &v) in p.objective.iter().enumerate() {
        if v != 0.0 {
            let _ = writeln!(out, "o {} {}", c, fmt(v));
        }
    }
    for (r, row) in p.rows.iter().enumerate() {
        for &(c, v) in row {
            let _ = writeln!(out, "a {} {} {}", r, c, fmt(v));
        }
    }
    for (r, &v) in p.rhs.iter().enumerate() {
        if v != 0.0 {
            let _ = writeln!(out, "b {} {}", r, fmt(v));
        }
    }
    out
}

fn fmt(v: f64) -> String {
    let s = format!("{}", v);
    if s.parse::<f64>() == Ok(v) {
        s
    } else {
        format!("{:.17e}", v)
    }
}

/// Parses the sparse text format produced by [`emit_text`].
pub fn parse_text(text: &str) -> Result<ConicProgram, ConicError> {
    let err = |line: usize, msg: &str| ConicError::Parse { line, msg: msg.into() };
    let mut lines = text.lines().enumerate();
    let mut expect = |tag: &str| -> Result<(usize, Vec<String>), ConicError> {
        let (i, l) = lines
            .next()
            .ok_or_else(|| err(0, "unexpected end of input"))?;
        let mut parts = l.split_whitespace().map(str::to_owned);
        if parts.next().as_deref() != Some(tag) {
            return Err(err(i + 1, &format!("expected {tag:?}")));
        }
        Ok((i + 1, parts.collect()))
    };
    let (i, v) = expect("conic")?;
    if v.first().map(String::as_str) != Some("1") {
        return Err(err(i, "unsupported version"));
    }
    let (i, v) = expect("vars")?;
    let n_vars: usize = v
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(i, "bad vars count"))?;
    let (i, v) = expect("cones")?;
    let n_cones: usize = v
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(i, "bad cone count"))?;
    let mut p = ConicProgram::new(n_vars);
    let mut n_rows = 0usize;
    for _ in 0..n_cones {
        let (i, v) = expect("cone")?;
        let kind = match v.first().map(String::as_str) {
            Some("zero") => ConeKind::Zero,
            Some("nonneg") => ConeKind::Nonneg,
            Some("soc") => ConeKind::Soc,
            Some("rsoc") => ConeKind::RotatedSoc,
            _ => return Err(err(i, "unknown cone kind")),
        };
        let dim: usize = v
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(i, "bad cone dim"))?;
        p.blocks.push(ConeBlock { kind, dim });
        n_rows += dim;
    }
    p.rows = vec![Vec::new(); n_rows];
    p.rhs = vec![0.0; n_rows];
    for (i, l) in lines {
        let line = i + 1;
        let mut parts = l.split_whitespace();
        let tag = match parts.next() {
            None => continue,
            Some(t) => t,
        };
        let fields: Vec<&str> = parts.collect();
        let f = |k: usize| -> Result<f64, ConicError> {
            fields
                .get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(line, "bad number"))
        };
        let u = |k: usize| -> Result<usize, ConicError> {
            fields
                .get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(line, "bad index"))
        };
        match tag {
            "obj" => p.constant = f(0)?,
            "o" => {
                let c = u(0)?;
                if c >= n_vars {
                    return Err(err(line, "objective column out of range"));
                }
                p.objective[c] = f(1)?;
            }
            "a" => {
                let (r, c) = (u(0)?, u(1)?);
                if r >= n_rows || c >= n_vars {
                    return Err(err(line, "triplet index out of range"));
                }
                p.rows[r].push((c, f(2)?));
            }
            "b" => {
                let r = u(0)?;
                if r >= n_rows {
                    return Err(err(line, "rhs index out of range"));
                }
                p.rhs[r] = f(1)?;
            }
            _ => return Err(err(line, "unknown record")),
        }
    }
    Ok(p)
}
