//! C ABI surface over the radial-sopf toolkit.
//!
//! All functions are panic-safe: panics are caught at the boundary and
//! reported as `SOPF_ERR_INTERNAL`. Handles are opaque; every constructor has
//! a matching `_free`, and `sopf_last_error_message` returns a thread-local,
//! NUL-terminated description of the most recent failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use radial_sopf::network::{load_network, NetworkFormat, RadialNetwork};
use radial_sopf::program::{
    build_program, extract_operating_point, CostSpec, Instance, Options,
};
use radial_sopf::conic::{solve_conic, SolveStatus};
use radial_sopf::certify::relative_gap_bound;
use radial_sopf::scenario::{
    build_scenario_tree, residual_demand, ScenarioTree, SdeParams, TimeGrid,
};

/// Success.
pub const SOPF_OK: i32 = 0;
/// Invalid argument (null pointer, bad length, option out of range).
pub const SOPF_ERR_ARGUMENT: i32 = 1;
/// Input text failed to parse or validate.
pub const SOPF_ERR_PARSE: i32 = 2;
/// The optimization model is infeasible.
pub const SOPF_ERR_INFEASIBLE: i32 = 3;
/// The solver stopped without a conclusive status.
pub const SOPF_ERR_NUMERICAL: i32 = 4;
/// Unexpected internal failure.
pub const SOPF_ERR_INTERNAL: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Returns the message of the most recent error on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sopf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque radial network handle.
pub struct SopfNetwork(RadialNetwork);

/// Opaque scenario tree handle.
pub struct SopfTree(ScenarioTree);

fn guard<T, F: FnOnce() -> Result<T, (i32, String)>>(default: T, f: F) -> (i32, T) {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => (SOPF_OK, v),
        Ok(Err((code, msg))) => {
            set_error(&msg);
            (code, default)
        }
        Err(_) => {
            set_error("internal panic");
            (SOPF_ERR_INTERNAL, default)
        }
    }
}

unsafe fn text_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, (i32, String)> {
    if ptr.is_null() {
        return Err((SOPF_ERR_ARGUMENT, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (SOPF_ERR_ARGUMENT, format!("{name} is not valid UTF-8")))
}

/// Parses a network from JSON text; returns null on failure.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sopf_network_load_json(json: *const c_char) -> *mut SopfNetwork {
    let (_, net) = guard(ptr::null_mut(), || {
        let text = text_arg(json, "json")?;
        let net = load_network(text.as_bytes(), NetworkFormat::Json)
            .map_err(|e| (SOPF_ERR_PARSE, e.to_string()))?;
        Ok(Box::into_raw(Box::new(SopfNetwork(net))))
    });
    net
}

/// Frees a network handle; null is accepted.
///
/// # Safety
/// `net` must come from `sopf_network_load_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sopf_network_free(net: *mut SopfNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of buses, or 0 for a null handle.
///
/// # Safety
/// `net` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sopf_network_bus_count(net: *const SopfNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.n_buses())
}

/// Number of lines, or 0 for a null handle.
///
/// # Safety
/// `net` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sopf_network_line_count(net: *const SopfNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.n_lines())
}

/// Builds a scenario tree from a JSON document with fields `params`
/// (diffusion parameters), `taus` (stage grid), and `branching`.
/// Returns null on failure.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sopf_tree_generate(json: *const c_char, seed: u64) -> *mut SopfTree {
    #[derive(serde::Deserialize)]
    struct SdeFile {
        params: SdeParams,
        taus: Vec<f64>,
        branching: Vec<usize>,
    }
    let (_, tree) = guard(ptr::null_mut(), || {
        let text = text_arg(json, "json")?;
        let file: SdeFile =
            serde_json::from_str(text).map_err(|e| (SOPF_ERR_PARSE, e.to_string()))?;
        let grid = TimeGrid::new(file.taus).map_err(|e| (SOPF_ERR_PARSE, e.to_string()))?;
        let tree = build_scenario_tree(&file.params, &grid, &file.branching, seed)
            .map_err(|e| (SOPF_ERR_PARSE, e.to_string()))?;
        Ok(Box::into_raw(Box::new(SopfTree(tree))))
    });
    tree
}

/// Parses a serialized scenario tree; returns null on failure.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sopf_tree_load_json(json: *const c_char) -> *mut SopfTree {
    let (_, tree) = guard(ptr::null_mut(), || {
        let text = text_arg(json, "json")?;
        let tree = ScenarioTree::from_json(text.as_bytes())
            .map_err(|e| (SOPF_ERR_PARSE, e.to_string()))?;
        Ok(Box::into_raw(Box::new(SopfTree(tree))))
    });
    tree
}

/// Frees a tree handle; null is accepted.
///
/// # Safety
/// `tree` must come from a tree constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sopf_tree_free(tree: *mut SopfTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// Number of leaves (scenarios), or 0 for a null handle.
///
/// # Safety
/// `tree` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sopf_tree_leaf_count(tree: *const SopfTree) -> usize {
    tree.as_ref().map_or(0, |t| t.0.n_leaves())
}

unsafe fn make_instance(
    net: *const SopfNetwork,
    tree: *const SopfTree,
    profile: *const f64,
    profile_len: usize,
    restricted: bool,
) -> Result<Instance, (i32, String)> {
    let net = net
        .as_ref()
        .ok_or((SOPF_ERR_ARGUMENT, "network handle is null".to_string()))?;
    let tree = tree
        .as_ref()
        .ok_or((SOPF_ERR_ARGUMENT, "tree handle is null".to_string()))?;
    if profile.is_null() {
        return Err((SOPF_ERR_ARGUMENT, "profile is null".to_string()));
    }
    let profile = std::slice::from_raw_parts(profile, profile_len);
    let demand = residual_demand(&net.0, &tree.0, profile)
        .map_err(|e| (SOPF_ERR_PARSE, e.to_string()))?;
    Ok(Instance {
        net: net.0.clone(),
        tree: tree.0.clone(),
        demand,
        cost: CostSpec::reference(),
        options: Options {
            restricted,
            ..Options::default()
        },
    })
}

fn optimal_value(inst: &Instance, tol: f64) -> Result<Option<f64>, (i32, String)> {
    let (p, idx) = build_program(inst).map_err(|e| (SOPF_ERR_PARSE, e.to_string()))?;
    let sol = solve_conic(&p, tol).map_err(|e| (SOPF_ERR_ARGUMENT, e.to_string()))?;
    match sol.status {
        SolveStatus::Optimal => {
            let op = extract_operating_point(inst, &idx, &sol.x)
                .map_err(|e| (SOPF_ERR_INTERNAL, e.to_string()))?;
            Ok(Some(op.objective))
        }
        SolveStatus::Infeasible => Ok(None),
        SolveStatus::Unbounded => Err((SOPF_ERR_NUMERICAL, "model is unbounded".to_string())),
        SolveStatus::NumericalLimit => Err((
            SOPF_ERR_NUMERICAL,
            "solver stopped at its numerical limit".to_string(),
        )),
    }
}

/// Solves the conic relaxation with the reference cost and writes the optimal
/// value to `objective_out`. `profile` holds one consumption factor per
/// stage. Returns an `SOPF_*` status code.
///
/// # Safety
/// Handles must be live; `profile` must point to `profile_len` doubles;
/// `objective_out` must be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn sopf_solve(
    net: *const SopfNetwork,
    tree: *const SopfTree,
    profile: *const f64,
    profile_len: usize,
    restricted: bool,
    tol: f64,
    objective_out: *mut f64,
) -> i32 {
    let (code, _) = guard((), || {
        if objective_out.is_null() {
            return Err((SOPF_ERR_ARGUMENT, "objective_out is null".to_string()));
        }
        let inst = make_instance(net, tree, profile, profile_len, restricted)?;
        match optimal_value(&inst, tol)? {
            Some(v) => {
                *objective_out = v;
                Ok(())
            }
            None => Err((SOPF_ERR_INFEASIBLE, "model is infeasible".to_string())),
        }
    });
    code
}

/// Solves both relaxations and writes the relative gap bound ε to `eps_out`.
/// `finite_out` receives 1 when the bound is finite (restricted problem
/// feasible) and 0 otherwise, in which case `eps_out` is untouched.
///
/// # Safety
/// Same contracts as `sopf_solve`; `eps_out` and `finite_out` must be valid
/// destinations.
#[no_mangle]
pub unsafe extern "C" fn sopf_gap_bound(
    net: *const SopfNetwork,
    tree: *const SopfTree,
    profile: *const f64,
    profile_len: usize,
    tol: f64,
    eps_out: *mut f64,
    finite_out: *mut i32,
) -> i32 {
    let (code, _) = guard((), || {
        if eps_out.is_null() || finite_out.is_null() {
            return Err((SOPF_ERR_ARGUMENT, "output pointer is null".to_string()));
        }
        let relaxed_inst = make_instance(net, tree, profile, profile_len, false)?;
        let relaxed = optimal_value(&relaxed_inst, tol)?
            .ok_or((SOPF_ERR_INFEASIBLE, "relaxed model is infeasible".to_string()))?;
        let mut restricted_inst = relaxed_inst;
        restricted_inst.options.restricted = true;
        let restricted = optimal_value(&restricted_inst, tol)?;
        match relative_gap_bound(restricted, relaxed)
            .map_err(|e| (SOPF_ERR_NUMERICAL, e.to_string()))?
        {
            radial_sopf::certify::GapBound::Finite(eps) => {
                *eps_out = eps;
                *finite_out = 1;
            }
            radial_sopf::certify::GapBound::Infinite => {
                *finite_out = 0;
            }
        }
        Ok(())
    });
    code
}
