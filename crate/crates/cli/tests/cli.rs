use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn mfkill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfkill")).args(args).output().expect("binary runs")
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    mfkill(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_fields_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config("lq_killing.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["g_star.csv", "u.csv", "diagnostics.json", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let diag = read_json(&dir.path().join("diagnostics.json"));
    assert!(diag["picard_iterations"].as_u64().unwrap() > 0);
    assert_eq!(diag["status"], "converged");
    let g = fs::read_to_string(dir.path().join("g_star.csv")).unwrap();
    assert!(g.starts_with("t,x,g0\n"));
    let first = g.lines().nth(1).unwrap();
    assert!(first.split(',').all(|c| c.len() >= 20), "full precision cells expected: {first}");
}

#[test]
fn manifest_records_hash_grid_and_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config("lq_killing.json"), dir.path(), &["--refine", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let m = read_json(&dir.path().join("manifest.json"));
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["grid"]["nx"], 201);
    assert_eq!(m["grid"]["nt"], 200);
    assert_eq!(m["tolerances"]["tol_pi"], 1e-6);
    assert_eq!(m["refine"], 1);
    assert!(!m["version"].as_str().unwrap().is_empty());
}

#[test]
fn separability_gap_decreases_over_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config("separability.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = read_json(&dir.path().join("diagnostics.json"));
    let gaps: Vec<f64> = diag["separability_gap"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(gaps.len(), 3);
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert_eq!(diag["decreasing"], true);
}

#[test]
fn malformed_json_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{ \"model\": { \"builtin\": ").unwrap();
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn unknown_experiment_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config("lq_killing.json"), dir.path(), &["--experiment", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown experiment"));
}

#[test]
fn invalid_tolerance_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tol.json");
    fs::write(&cfg, r#"{"model": {"builtin": "lq_killing"}, "solver": {"tol_pi": 0.0}}"#).unwrap();
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.json");
    fs::write(
        &cfg,
        r#"{"model": {"builtin": "lq_killing"},
            "grid": {"nx": 41, "ny": 5, "nt": 20, "y_max": 2.0, "extension": 0.0},
            "solver": {"max_iter": 1}}"#,
    )
    .unwrap();
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
    let diag = read_json(&dir.path().join("out/diagnostics.json"));
    assert_eq!(diag["status"], "max_iterations");
}

#[test]
fn particles_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.json");
    fs::write(
        &cfg,
        r#"{"model": {"builtin": "lq_killing"},
            "grid": {"nx": 41, "ny": 5, "nt": 20, "y_max": 2.0, "extension": 0.0},
            "particles": {"count": 100},
            "experiment": "particles"}"#,
    )
    .unwrap();
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run(&config("particles.json"), d.path(), &["--seed", "42"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["particles_T.csv", "alive.csv", "nu_particles_T.csv", "diagnostics.json", "manifest.json"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between reruns");
    }
    let m = read_json(&a.path().join("manifest.json"));
    assert_eq!(m["seed"], 42);
}

#[test]
fn other_experiments_run() {
    for (cfg, file) in [
        ("smp_check.json", "g_star.csv"),
        ("regularize_sweep.json", "regularize.csv"),
        ("constant_intensity.json", "mu_T.csv"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&config(cfg), dir.path(), &[]);
        assert_eq!(out.status.code(), Some(0), "{cfg}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join(file).exists());
    }
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config("lq_killing.json"), dir.path(), &["--experiment", "backward"]);
    assert_eq!(out.status.code(), Some(0));
    let diag = read_json(&dir.path().join("diagnostics.json"));
    assert!(diag["energy"]["constant"].as_f64().unwrap().is_finite());
}
