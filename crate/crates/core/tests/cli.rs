//! End-to-end tests of the command-line binary: exit codes, artifacts, and
//! determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_radial-sopf")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn write(&self, name: &str, text: &str) -> String {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p.display().to_string()
    }

    fn network_2bus(&self) -> String {
        self.write(
            "net.json",
            &serde_json::json!({"s_base_mva": 1.0, "v_base_kv": 12.0, "buses": [
                {"id": 0, "v_min": 1.0, "v_max": 1.0, "peak": 0.0},
                {"id": 1, "parent": 0, "r": 0.01, "x": 0.01,
                 "v_min": 0.81, "v_max": 1.21, "peak": 0.5},
            ]})
            .to_string(),
        )
    }

    /// Daily grid, branching 2 at the 10h/12h/14h stages: 8 scenarios.
    fn sde_8(&self) -> String {
        self.write(
            "sde.json",
            &serde_json::json!({
                "params": {"i_ref": 0.75, "a": 0.75, "sigma": 0.7, "alpha": 0.8,
                            "beta": 0.7, "i0": 0.5, "euler_step": 0.1, "n_paths": 512},
                "taus": [0.0, 7.0, 10.0, 12.0, 14.0, 16.0, 18.0, 21.0, 24.0, 31.0],
                "branching": [1, 2, 2, 2, 1, 1, 1, 1],
            })
            .to_string(),
        )
    }

    fn sde_flat(&self) -> String {
        self.write(
            "sde1.json",
            &serde_json::json!({
                "params": {"i_ref": 0.75, "a": 0.75, "sigma": 0.7, "alpha": 0.8,
                            "beta": 0.7, "i0": 0.5, "euler_step": 0.1, "n_paths": 256},
                "taus": [0.0, 7.0, 10.0, 12.0, 14.0, 16.0, 18.0, 21.0, 24.0, 31.0],
                "branching": [1, 1, 1, 1, 1, 1, 1, 1],
            })
            .to_string(),
        )
    }

    fn profile_9(&self) -> String {
        self.write("profile.json", "[0.3, 0.5, 0.6, 0.7, 0.7, 0.6, 0.5, 0.4, 0.3]")
    }
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .trim_end()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn tree_gen_flat_branching_has_one_row_per_stage() {
    let fx = Fixture::new();
    let sde = fx.sde_flat();
    let out = run(&["tree-gen", "--sde-params", &sde, "--seed", "3", "--out", &fx.arg("out")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&fx.path("out/tree.csv"));
    assert_eq!(rows[0], "stage,node,value,prob");
    assert_eq!(rows.len() - 1, 9, "one node per stage under C = 1");
    assert!(fx.path("out/tree.json").exists());
    assert!(fx.path("out/manifest.json").exists());
}

#[test]
fn tree_gen_same_seed_is_byte_identical() {
    let fx = Fixture::new();
    let sde = fx.sde_8();
    for dir in ["a", "b"] {
        let out = run(&["tree-gen", "--sde-params", &sde, "--seed", "9", "--out", &fx.arg(dir)]);
        assert!(out.status.success());
    }
    for name in ["tree.json", "tree.csv", "manifest.json"] {
        assert_eq!(
            fs::read(fx.path(&format!("a/{name}"))).unwrap(),
            fs::read(fx.path(&format!("b/{name}"))).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn solve_writes_series_with_one_band_per_scenario() {
    let fx = Fixture::new();
    let net = fx.network_2bus();
    let sde = fx.sde_8();
    let profile = fx.profile_9();
    let out = run(&[
        "solve", "--network", &net, "--sde-params", &sde, "--profile", &profile,
        "--seed", "5", "--out", &fx.arg("out"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("objective "));
    for name in ["series_losses.csv", "series_p0.csv"] {
        let rows = csv_rows(&fx.path(&format!("out/{name}")));
        // stage column + 8 scenario values per stage
        assert_eq!(rows[0].split(',').count(), 9, "{name} header");
        assert_eq!(rows.len() - 1, 9, "{name} rows");
        for row in &rows[1..] {
            assert_eq!(row.split(',').count(), 9, "{name}: {row}");
        }
    }
    assert!(fx.path("out/solution.csv").exists());
    assert!(fx.path("out/manifest.json").exists());
}

#[test]
fn recover_output_passes_audit_as_exact() {
    let fx = Fixture::new();
    let net = fx.network_2bus();
    let sde = fx.sde_8();
    let profile = fx.profile_9();
    let out = run(&[
        "recover", "--network", &net, "--sde-params", &sde, "--profile", &profile,
        "--seed", "5", "--out", &fx.arg("rec"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fx.path("rec/sweep_log.csv").exists());
    let solution = fx.arg("rec/solution.csv");
    let out = run(&[
        "audit", "--network", &net, "--sde-params", &sde, "--profile", &profile,
        "--seed", "5", "--solution", &solution, "--restricted",
        "--out", &fx.arg("aud"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).trim(), "classification feasible-for-exact");
    assert!(fx.path("aud/audit.json").exists());
}

#[test]
fn certify_pure_load_feeder_passes() {
    let fx = Fixture::new();
    let net = fx.network_2bus();
    let out = run(&[
        "certify", "--network", &net, "--solar-total", "0", "--out", &fx.arg("out"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).trim(), "verdict pass");
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fx.path("out/certificate.json")).unwrap())
            .unwrap();
    assert_eq!(cert["verdict"]["status"], "pass");
}

#[test]
fn gap_prints_small_epsilon_when_optima_coincide() {
    let fx = Fixture::new();
    let net = fx.network_2bus();
    let sde = fx.sde_flat();
    let profile = fx.profile_9();
    let out = run(&[
        "gap", "--network", &net, "--sde-params", &sde, "--profile", &profile,
        "--seed", "2", "--out", &fx.arg("out"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let eps: f64 = text
        .trim()
        .strip_prefix("epsilon = ")
        .expect("epsilon line")
        .parse()
        .unwrap();
    // pure-load feeder: restriction costs nothing, so the bound vanishes
    assert!(eps <= 1e-6, "epsilon = {eps}");
    assert!(fx.path("out/gap.json").exists());
}

#[test]
fn capacity_reports_threshold() {
    let fx = Fixture::new();
    let net = fx.network_2bus();
    let out = run(&["capacity", "--network", &net, "--out", &fx.arg("out")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("capacity = "));
    assert!(fx.path("out/capacity.json").exists());
}

#[test]
fn missing_flags_exit_with_usage_code() {
    let out = run(&["solve"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unreadable_network_exits_with_usage_code() {
    let fx = Fixture::new();
    let sde = fx.sde_flat();
    let profile = fx.profile_9();
    let out = run(&[
        "solve", "--network", &fx.arg("missing.json"), "--sde-params", &sde,
        "--profile", &profile, "--out", &fx.arg("out"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn infeasible_model_exits_with_code_two() {
    let fx = Fixture::new();
    // bus 1 is pinned to unit voltage, which a nonzero load cannot satisfy
    let net = fx.write(
        "pinned.json",
        &serde_json::json!({"s_base_mva": 1.0, "v_base_kv": 12.0, "buses": [
            {"id": 0, "v_min": 1.0, "v_max": 1.0, "peak": 0.0},
            {"id": 1, "parent": 0, "r": 0.01, "x": 0.01,
             "v_min": 1.0, "v_max": 1.0, "peak": 1.0},
        ]})
        .to_string(),
    );
    let sde = fx.sde_flat();
    let profile = fx.profile_9();
    let out = run(&[
        "solve", "--network", &net, "--sde-params", &sde, "--profile", &profile,
        "--out", &fx.arg("out"),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_same_seed_is_byte_identical() {
    let fx = Fixture::new();
    let net = fx.network_2bus();
    let sde = fx.sde_flat();
    let profile = fx.profile_9();
    for dir in ["a", "b"] {
        let out = run(&[
            "solve", "--network", &net, "--sde-params", &sde, "--profile", &profile,
            "--seed", "5", "--out", &fx.arg(dir),
        ]);
        assert!(out.status.success());
    }
    for name in ["solution.csv", "series_losses.csv", "series_p0.csv", "manifest.json"] {
        assert_eq!(
            fs::read(fx.path(&format!("a/{name}"))).unwrap(),
            fs::read(fx.path(&format!("b/{name}"))).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn manifest_records_input_digests() {
    let fx = Fixture::new();
    let net = fx.network_2bus();
    let out = run(&["certify", "--network", &net, "--out", &fx.arg("out")]);
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fx.path("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "certify");
    let digest = manifest["inputs"][&net].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));
}
