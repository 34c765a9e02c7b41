//! Batch command surface: assembles instances from files, drives the solver,
//! the sweep, and the certificates, and emits plot-ready CSV artifacts plus a
//! reproducibility manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certify::{
    a_priori_certificate, default_s_bar, gap_certificate, max_capacity_lp, CapacityMode,
    CertifyError, Verdict,
};
use crate::conic::{solve_conic, SolveStatus};
use crate::network::{load_network, NetworkFormat, RadialNetwork};
use crate::oracle::constraint_violation_report;
use crate::program::{
    build_program, evaluate_cost, extract_operating_point, CostSpec, Instance, OperatingPoint,
    Options,
};
use crate::scenario::{
    build_scenario_tree, residual_demand, DemandLattice, ScenarioTree, SdeParams, TimeGrid,
};
use crate::sweep::{recover_feasible_point, write_log_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug)]
enum CliError {
    /// Usage or data problem → exit 1.
    Usage(String),
    /// Model proven infeasible → exit 2.
    Infeasible(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Infeasible(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Usage(format!("{context}: {e}"))
}

#[derive(Parser, Debug)]
#[command(
    name = "radial-sopf",
    version,
    about = "Multistage stochastic OPF toolkit for radial distribution feeders"
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a scenario tree from clear-sky diffusion parameters.
    TreeGen(TreeGenArgs),
    /// Solve the conic relaxation and write solution + series artifacts.
    Solve(InstanceArgs),
    /// Solve the restricted relaxation and recover an exact operating point.
    Recover(InstanceArgs),
    /// Evaluate the a-priori zero-gap certificate on worst-case flows.
    Certify(CertifyArgs),
    /// Solve both relaxations and print the relative gap bound.
    Gap(InstanceArgs),
    /// Maximize installed capacity subject to the certificate conditions.
    Capacity(CapacityArgs),
    /// Audit a solution file against every constraint family.
    Audit(AuditArgs),
}

#[derive(Args, Debug)]
struct TreeGenArgs {
    /// JSON file with diffusion parameters, stage grid, and branching vector.
    #[arg(long)]
    sde_params: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InstanceArgs {
    /// Network file (.json or .csv).
    #[arg(long)]
    network: PathBuf,
    /// Pre-built scenario tree (JSON).
    #[arg(long, conflicts_with = "sde_params")]
    tree: Option<PathBuf>,
    /// Diffusion parameters to generate the tree from (JSON).
    #[arg(long)]
    sde_params: Option<PathBuf>,
    /// Per-stage consumption profile (JSON array).
    #[arg(long)]
    profile: PathBuf,
    /// Add the linearized block and reverse-flow compensation constraints.
    #[arg(long)]
    restricted: bool,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Import price.
    #[arg(long, default_value_t = 1.0)]
    c0_plus: f64,
    /// Export price.
    #[arg(long, default_value_t = 0.5)]
    c0_minus: f64,
    /// Loss price.
    #[arg(long, default_value_t = 2.0)]
    closs: f64,
    /// Battery throughput price.
    #[arg(long, default_value_t = 0.0)]
    cbat: f64,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[arg(long)]
    network: PathBuf,
    /// Total installed solar capacity to allocate over the pattern.
    #[arg(long, default_value_t = 0.0)]
    solar_total: f64,
    /// "diffuse" (every non-slack bus) or comma-separated bus ids.
    #[arg(long, default_value = "diffuse")]
    pattern: String,
    /// Optional tree + profile pair; adds residual demand to the flow bounds.
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CapacityArgs {
    #[arg(long)]
    network: PathBuf,
    /// "diffuse" (every non-slack bus) or comma-separated bus ids.
    #[arg(long, default_value = "diffuse")]
    pattern: String,
    /// "scaled" (one scale factor) or "independent" (per-bus capacities).
    #[arg(long, default_value = "scaled")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long, conflicts_with = "sde_params")]
    tree: Option<PathBuf>,
    #[arg(long)]
    sde_params: Option<PathBuf>,
    #[arg(long)]
    profile: PathBuf,
    /// Solution CSV produced by `solve` or `recover`.
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    restricted: bool,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the command line and returns the process exit code; 0 success,
/// 1 usage or data error, 2 infeasible model.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version via "errors" that should exit 0
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::TreeGen(a) => cmd_tree_gen(&a),
        Cmd::Solve(a) => cmd_solve(&a),
        Cmd::Recover(a) => cmd_recover(&a),
        Cmd::Certify(a) => cmd_certify(&a),
        Cmd::Gap(a) => cmd_gap(&a),
        Cmd::Capacity(a) => cmd_capacity(&a),
        Cmd::Audit(a) => cmd_audit(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

// ---------------------------------------------------------------- plumbing

fn thread_cap() -> Result<usize, CliError> {
    match std::env::var("RADIAL_SOPF_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => s.parse::<usize>().map_err(|_| {
            CliError::Usage(format!("RADIAL_SOPF_THREADS must be a positive integer, got {s:?}"))
        }),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(usage(&format!("cannot read {}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    seed: Option<u64>,
    tol: Option<f64>,
    threads: usize,
    /// Input path → sha256 of its bytes.
    inputs: BTreeMap<String, String>,
}

impl Manifest {
    fn new(command: &str) -> Result<Self, CliError> {
        Ok(Manifest {
            command: command.to_string(),
            seed: None,
            tol: None,
            threads: thread_cap()?,
            inputs: BTreeMap::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = read_bytes(path)?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn write(&self, out: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialization");
        write_artifact(out, "manifest.json", text.as_bytes())
    }
}

fn write_artifact(out: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(usage(&format!("cannot create {}", out.display())))?;
    let path = out.join(name);
    fs::write(&path, bytes).map_err(usage(&format!("cannot write {}", path.display())))?;
    Ok(())
}

fn load_network_file(manifest: &mut Manifest, path: &Path) -> Result<RadialNetwork, CliError> {
    let bytes = manifest.input(path)?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => NetworkFormat::Csv,
        _ => NetworkFormat::Json,
    };
    load_network(bytes.as_slice(), format).map_err(usage(&format!("{}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SdeFile {
    params: SdeParams,
    /// Stage boundaries τ_1 < … < τ_{T+1} in hours.
    taus: Vec<f64>,
    /// Branching factor per transition (length = stages − 1).
    branching: Vec<usize>,
}

fn load_tree(
    manifest: &mut Manifest,
    tree: &Option<PathBuf>,
    sde_params: &Option<PathBuf>,
    seed: u64,
) -> Result<ScenarioTree, CliError> {
    match (tree, sde_params) {
        (Some(path), _) => {
            let bytes = manifest.input(path)?;
            ScenarioTree::from_json(bytes.as_slice()).map_err(usage(&format!("{}", path.display())))
        }
        (None, Some(path)) => {
            let bytes = manifest.input(path)?;
            let file: SdeFile = serde_json::from_slice(&bytes)
                .map_err(usage(&format!("{}", path.display())))?;
            let grid = TimeGrid::new(file.taus).map_err(usage(&format!("{}", path.display())))?;
            build_scenario_tree(&file.params, &grid, &file.branching, seed)
                .map_err(usage(&format!("{}", path.display())))
        }
        (None, None) => Err(CliError::Usage(
            "one of --tree or --sde-params is required".into(),
        )),
    }
}

fn load_profile(manifest: &mut Manifest, path: &Path) -> Result<Vec<f64>, CliError> {
    let bytes = manifest.input(path)?;
    serde_json::from_slice(&bytes).map_err(usage(&format!("{}", path.display())))
}

fn assemble_instance(manifest: &mut Manifest, a: &InstanceArgs) -> Result<Instance, CliError> {
    manifest.seed = Some(a.seed);
    manifest.tol = Some(a.tol);
    let net = load_network_file(manifest, &a.network)?;
    let tree = load_tree(manifest, &a.tree, &a.sde_params, a.seed)?;
    let profile = load_profile(manifest, &a.profile)?;
    let demand = residual_demand(&net, &tree, &profile)
        .map_err(usage(&format!("{}", a.profile.display())))?;
    let inst = Instance {
        net,
        tree,
        demand,
        cost: CostSpec {
            c0_plus: a.c0_plus,
            c0_minus: a.c0_minus,
            c_loss: a.closs,
            c_bat: a.cbat,
        },
        options: Options {
            restricted: a.restricted,
            ..Options::default()
        },
    };
    inst.validate().map_err(usage("instance"))?;
    Ok(inst)
}

fn solve_instance(inst: &Instance, tol: f64) -> Result<OperatingPoint, CliError> {
    let (p, idx) = build_program(inst).map_err(usage("program"))?;
    let sol = solve_conic(&p, tol).map_err(usage("solver"))?;
    match sol.status {
        SolveStatus::Optimal => {
            extract_operating_point(inst, &idx, &sol.x).map_err(usage("solution"))
        }
        SolveStatus::Infeasible => Err(CliError::Infeasible(format!(
            "{} model is infeasible",
            if inst.options.restricted { "restricted" } else { "relaxed" }
        ))),
        SolveStatus::Unbounded => Err(CliError::Usage("model is unbounded".into())),
        SolveStatus::NumericalLimit => {
            Err(CliError::Usage("solver stopped at its numerical limit".into()))
        }
    }
}

// --------------------------------------------------------------- artifacts

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn solution_csv(op: &OperatingPoint) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["node", "quantity", "value"]).unwrap();
    let mut put = |n: usize, q: String, v: f64| {
        w.write_record(&[n.to_string(), q, fmt(v)]).unwrap();
    };
    for n in 0..op.n_nodes {
        put(n, "re_s0".into(), op.s0[n].re);
        put(n, "im_s0".into(), op.s0[n].im);
        put(n, "p0_plus".into(), op.p0_plus[n]);
        put(n, "p0_minus".into(), op.p0_minus[n]);
        for b in 0..op.n_buses {
            let k = op.bn(b, n);
            put(n, format!("v[{b}]"), op.v[k]);
            put(n, format!("p_inj[{b}]"), op.p_inj[k]);
            put(n, format!("p_abs[{b}]"), op.p_abs[k]);
            put(n, format!("q[{b}]"), op.q[k]);
            put(n, format!("x[{b}]"), op.x[k]);
            put(n, format!("x_terminal[{b}]"), op.x_terminal[k]);
        }
        for l in 0..op.n_lines {
            let k = op.ln(l, n);
            put(n, format!("re_s[{l}]"), op.s_flow[k].re);
            put(n, format!("im_s[{l}]"), op.s_flow[k].im);
            put(n, format!("current[{l}]"), op.current[k]);
        }
        if let (Some(s0), Some(vl), Some(sl)) = (&op.s0_lin, &op.v_lin, &op.s_lin) {
            put(n, "re_s0_lin".into(), s0[n].re);
            put(n, "im_s0_lin".into(), s0[n].im);
            for b in 0..op.n_buses {
                put(n, format!("v_lin[{b}]"), vl[op.bn(b, n)]);
            }
            for l in 0..op.n_lines {
                put(n, format!("re_s_lin[{l}]"), sl[op.ln(l, n)].re);
                put(n, format!("im_s_lin[{l}]"), sl[op.ln(l, n)].im);
            }
        }
    }
    w.into_inner().unwrap()
}

fn parse_quantity(q: &str) -> Result<(String, Option<usize>), CliError> {
    match q.split_once('[') {
        None => Ok((q.to_string(), None)),
        Some((name, rest)) => {
            let idx = rest
                .strip_suffix(']')
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| CliError::Usage(format!("malformed quantity {q:?}")))?;
            Ok((name.to_string(), Some(idx)))
        }
    }
}

fn read_solution_csv(inst: &Instance, bytes: &[u8]) -> Result<OperatingPoint, CliError> {
    let nb = inst.net.n_buses();
    let nl = inst.net.n_lines();
    let nn = inst.tree.n_nodes();
    let text = std::str::from_utf8(bytes).map_err(usage("solution file"))?;
    let restricted = text.contains("re_s0_lin");
    let mut op = OperatingPoint::zero(nb, nl, nn, restricted);
    let mut rdr = csv::Reader::from_reader(bytes);
    for rec in rdr.records() {
        let rec = rec.map_err(usage("solution file"))?;
        if rec.len() != 3 {
            return Err(CliError::Usage(format!("solution row has {} fields", rec.len())));
        }
        let n: usize = rec[0].parse().map_err(usage("solution node column"))?;
        let v: f64 = rec[2].parse().map_err(usage("solution value column"))?;
        if n >= nn {
            return Err(CliError::Usage(format!("node {n} outside the tree")));
        }
        let (name, elem) = parse_quantity(&rec[1])?;
        let bus = |e: Option<usize>| -> Result<usize, CliError> {
            match e {
                Some(b) if b < nb => Ok(b * nn + n),
                _ => Err(CliError::Usage(format!("bad bus index in {:?}", &rec[1]))),
            }
        };
        let line = |e: Option<usize>| -> Result<usize, CliError> {
            match e {
                Some(l) if l < nl => Ok(l * nn + n),
                _ => Err(CliError::Usage(format!("bad line index in {:?}", &rec[1]))),
            }
        };
        match name.as_str() {
            "re_s0" => op.s0[n].re = v,
            "im_s0" => op.s0[n].im = v,
            "p0_plus" => op.p0_plus[n] = v,
            "p0_minus" => op.p0_minus[n] = v,
            "v" => op.v[bus(elem)?] = v,
            "p_inj" => op.p_inj[bus(elem)?] = v,
            "p_abs" => op.p_abs[bus(elem)?] = v,
            "q" => op.q[bus(elem)?] = v,
            "x" => op.x[bus(elem)?] = v,
            "x_terminal" => op.x_terminal[bus(elem)?] = v,
            "re_s" => op.s_flow[line(elem)?].re = v,
            "im_s" => op.s_flow[line(elem)?].im = v,
            "current" => op.current[line(elem)?] = v,
            "re_s0_lin" => op.s0_lin.as_mut().unwrap()[n].re = v,
            "im_s0_lin" => op.s0_lin.as_mut().unwrap()[n].im = v,
            "v_lin" => op.v_lin.as_mut().unwrap()[bus(elem)?] = v,
            "re_s_lin" => op.s_lin.as_mut().unwrap()[line(elem)?].re = v,
            "im_s_lin" => op.s_lin.as_mut().unwrap()[line(elem)?].im = v,
            other => return Err(CliError::Usage(format!("unknown quantity {other:?}"))),
        }
    }
    op.objective = evaluate_cost(inst, &op);
    Ok(op)
}

/// Per-stage scenario values sorted ascending, i.e. empirical quantile bands.
fn series_csv<F: Fn(usize) -> f64>(tree: &ScenarioTree, value_at_node: F) -> Vec<u8> {
    let leaves = tree.leaves();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["stage".to_string()];
    header.extend((1..=leaves.len()).map(|k| format!("band{k}")));
    w.write_record(&header).unwrap();
    for t in 0..tree.grid.n_stages() {
        let mut vals: Vec<f64> = leaves
            .iter()
            .map(|&leaf| value_at_node(tree.ancestor_at(leaf, t)))
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut row = vec![t.to_string()];
        row.extend(vals.iter().map(|&v| fmt(v)));
        w.write_record(&row).unwrap();
    }
    w.into_inner().unwrap()
}

fn losses_at(inst: &Instance, op: &OperatingPoint, node: usize) -> f64 {
    inst.net
        .lines()
        .iter()
        .enumerate()
        .map(|(l, line)| line.r * op.current[op.ln(l, node)])
        .sum()
}

fn tree_csv(tree: &ScenarioTree) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "node", "value", "prob"]).unwrap();
    for node in tree.nodes() {
        w.write_record(&[
            node.stage.to_string(),
            node.id.to_string(),
            fmt(node.value),
            fmt(node.prob),
        ])
        .unwrap();
    }
    w.into_inner().unwrap()
}

fn pattern_weights(net: &RadialNetwork, spec: &str) -> Result<Vec<f64>, CliError> {
    let mut w = vec![0.0; net.n_buses()];
    if spec == "diffuse" {
        for wb in w.iter_mut().skip(1) {
            *wb = 1.0;
        }
        return Ok(w);
    }
    for part in spec.split(',') {
        let id: i64 = part
            .trim()
            .parse()
            .map_err(usage(&format!("pattern entry {part:?}")))?;
        let label = (0..net.n_buses())
            .find(|&b| net.original_id(b) == id)
            .ok_or_else(|| CliError::Usage(format!("pattern bus {id} not in the network")))?;
        if label == 0 {
            return Err(CliError::Usage("pattern cannot include the slack bus".into()));
        }
        w[label] = 1.0;
    }
    Ok(w)
}

// ---------------------------------------------------------------- commands

fn cmd_tree_gen(a: &TreeGenArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("tree-gen")?;
    manifest.seed = Some(a.seed);
    let bytes = manifest.input(&a.sde_params)?;
    let file: SdeFile =
        serde_json::from_slice(&bytes).map_err(usage(&format!("{}", a.sde_params.display())))?;
    let grid =
        TimeGrid::new(file.taus.clone()).map_err(usage(&format!("{}", a.sde_params.display())))?;
    let tree = build_scenario_tree(&file.params, &grid, &file.branching, a.seed)
        .map_err(usage(&format!("{}", a.sde_params.display())))?;
    let mut json = Vec::new();
    tree.to_json(&mut json).map_err(usage("tree serialization"))?;
    write_artifact(&a.out, "tree.json", &json)?;
    write_artifact(&a.out, "tree.csv", &tree_csv(&tree))?;
    manifest.write(&a.out)?;
    println!("tree with {} leaves over {} stages", tree.n_leaves(), tree.grid.n_stages());
    Ok(())
}

fn cmd_solve(a: &InstanceArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("solve")?;
    let inst = assemble_instance(&mut manifest, a)?;
    let op = solve_instance(&inst, a.tol)?;
    write_artifact(&a.out, "solution.csv", &solution_csv(&op))?;
    write_artifact(
        &a.out,
        "series_losses.csv",
        &series_csv(&inst.tree, |n| losses_at(&inst, &op, n)),
    )?;
    write_artifact(&a.out, "series_p0.csv", &series_csv(&inst.tree, |n| op.s0[n].re))?;
    manifest.write(&a.out)?;
    println!("objective {}", fmt(op.objective));
    Ok(())
}

fn cmd_recover(a: &InstanceArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("recover")?;
    let restricted = a.clone_with_restricted();
    let inst = assemble_instance(&mut manifest, &restricted)?;
    let start = solve_instance(&inst, a.tol)?;
    let sweep_tol = a.tol.min(1e-10);
    let outcome =
        recover_feasible_point(&inst, &start, sweep_tol, 500).map_err(usage("sweep"))?;
    let op = &outcome.point;
    write_artifact(&a.out, "solution.csv", &solution_csv(op))?;
    write_artifact(
        &a.out,
        "series_losses.csv",
        &series_csv(&inst.tree, |n| losses_at(&inst, op, n)),
    )?;
    write_artifact(&a.out, "series_p0.csv", &series_csv(&inst.tree, |n| op.s0[n].re))?;
    let mut log = Vec::new();
    write_log_csv(&outcome.log, &mut log).map_err(usage("sweep log"))?;
    write_artifact(&a.out, "sweep_log.csv", &log)?;
    manifest.write(&a.out)?;
    println!(
        "recovered in {} iterations, objective {}",
        outcome.iterations,
        fmt(op.objective)
    );
    Ok(())
}

impl InstanceArgs {
    /// `recover` always solves the restricted problem; the sweep's monotone
    /// guarantees need the linearized block in the start.
    fn clone_with_restricted(&self) -> InstanceArgs {
        InstanceArgs {
            network: self.network.clone(),
            tree: self.tree.clone(),
            sde_params: self.sde_params.clone(),
            profile: self.profile.clone(),
            restricted: true,
            tol: self.tol,
            seed: self.seed,
            out: self.out.clone(),
            c0_plus: self.c0_plus,
            c0_minus: self.c0_minus,
            closs: self.closs,
            cbat: self.cbat,
        }
    }
}

fn cmd_certify(a: &CertifyArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("certify")?;
    let net = load_network_file(&mut manifest, &a.network)?;
    let weights = pattern_weights(&net, &a.pattern)?;
    let total: f64 = weights.iter().sum();
    let (mut s_bar, n_nodes) = match (&a.tree, &a.profile) {
        (Some(tp), Some(pp)) => {
            let bytes = manifest.input(tp)?;
            let tree = ScenarioTree::from_json(bytes.as_slice())
                .map_err(usage(&format!("{}", tp.display())))?;
            let profile = load_profile(&mut manifest, pp)?;
            let demand = residual_demand(&net, &tree, &profile)
                .map_err(usage(&format!("{}", pp.display())))?;
            let n = demand.n_nodes;
            (default_s_bar(&net, &demand), n)
        }
        (None, None) => {
            let demand = DemandLattice::zero(net.n_buses(), 1);
            (default_s_bar(&net, &demand), 1)
        }
        _ => {
            return Err(CliError::Usage(
                "--tree and --profile must be given together".into(),
            ))
        }
    };
    if a.solar_total < 0.0 {
        return Err(CliError::Usage("--solar-total must be nonnegative".into()));
    }
    for b in 1..net.n_buses() {
        let add = a.solar_total * weights[b] / total;
        for n in 0..n_nodes {
            s_bar[b * n_nodes + n] += Complex64::new(add, 0.0);
        }
    }
    let cert = a_priori_certificate(&net, &s_bar, n_nodes, true).map_err(usage("certificate"))?;
    write_artifact(&a.out, "certificate.json", cert.to_json().as_bytes())?;
    manifest.write(&a.out)?;
    println!("verdict {}", if cert.passed() { "pass" } else { "fail" });
    Ok(())
}

fn cmd_gap(a: &InstanceArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("gap")?;
    let mut relaxed_args = a.clone_with_restricted();
    relaxed_args.restricted = false;
    let inst = assemble_instance(&mut manifest, &relaxed_args)?;
    let relaxed = solve_instance(&inst, a.tol)?;
    let mut restricted_inst = inst;
    restricted_inst.options.restricted = true;
    let restricted_val = match solve_instance(&restricted_inst, a.tol) {
        Ok(op) => Some(op.objective),
        Err(CliError::Infeasible(_)) => None,
        Err(e) => return Err(e),
    };
    let cert =
        gap_certificate(restricted_val, relaxed.objective).map_err(usage("gap bound"))?;
    write_artifact(&a.out, "gap.json", cert.to_json().as_bytes())?;
    manifest.write(&a.out)?;
    match cert.verdict {
        Verdict::Threshold(e) => println!("epsilon = {}", fmt(e)),
        _ => println!("epsilon = infinite (restricted problem infeasible)"),
    }
    Ok(())
}

fn cmd_capacity(a: &CapacityArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("capacity")?;
    let net = load_network_file(&mut manifest, &a.network)?;
    let weights = pattern_weights(&net, &a.pattern)?;
    let mode = match a.mode.as_str() {
        "scaled" => CapacityMode::Scaled,
        "independent" => CapacityMode::Independent,
        other => {
            return Err(CliError::Usage(format!(
                "--mode must be scaled or independent, got {other:?}"
            )))
        }
    };
    let fixed = vec![Complex64::default(); net.n_buses()];
    let cert = match max_capacity_lp(&net, &weights, &fixed, mode, true) {
        Ok(c) => c,
        Err(CertifyError::InfeasibleLp) => {
            return Err(CliError::Infeasible("capacity LP is infeasible".into()))
        }
        Err(e) => return Err(CliError::Usage(format!("capacity LP: {e}"))),
    };
    write_artifact(&a.out, "capacity.json", cert.to_json().as_bytes())?;
    manifest.write(&a.out)?;
    match cert.verdict {
        Verdict::Threshold(c) => println!("capacity = {}", fmt(c)),
        _ => println!("capacity unbounded"),
    }
    Ok(())
}

fn cmd_audit(a: &AuditArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("audit")?;
    manifest.seed = Some(a.seed);
    manifest.tol = Some(a.tol);
    let net = load_network_file(&mut manifest, &a.network)?;
    let tree = load_tree(&mut manifest, &a.tree, &a.sde_params, a.seed)?;
    let profile = load_profile(&mut manifest, &a.profile)?;
    let demand = residual_demand(&net, &tree, &profile)
        .map_err(usage(&format!("{}", a.profile.display())))?;
    let inst = Instance {
        net,
        tree,
        demand,
        cost: CostSpec::reference(),
        options: Options {
            restricted: a.restricted,
            ..Options::default()
        },
    };
    let bytes = manifest.input(&a.solution)?;
    let op = read_solution_csv(&inst, &bytes)?;
    let report = constraint_violation_report(&inst, &op, a.tol)
        .map_err(usage(&format!("{}", a.solution.display())))?;
    write_artifact(&a.out, "audit.json", report.to_json().as_bytes())?;
    manifest.write(&a.out)?;
    let label = match report.classification {
        crate::oracle::Classification::FeasibleForP => "feasible-for-exact",
        crate::oracle::Classification::FeasibleForSocOnly => "feasible-for-relaxation-only",
        crate::oracle::Classification::Infeasible => "infeasible",
    };
    println!("classification {label}");
    Ok(())
}

// ------------------------------------------------------------------- tests
