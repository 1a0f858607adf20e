use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_stdout(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn bundled_config() -> PathBuf {
    manifest_dir().join("examples/central_fgn.json")
}

fn schema() -> Value {
    let path = manifest_dir().join("../../docs/summary.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_valid(summary: &Value) {
    let validator = jsonschema::validator_for(&schema()).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(summary).map(|e| format!("{e} at {}", e.instance_path())).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

fn write_config(dir: &Path, name: &str, body: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(body).unwrap()).unwrap();
    p
}

#[test]
fn hermite_builtin_abs() {
    let o = bmlab(&["hermite", "--builtin", "abs", "--qmax", "8"]);
    assert!(o.status.success());
    let v = json_stdout(&o);
    let c: Vec<f64> = v["coeffs"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(c.len(), 9);
    let k = (2.0 / std::f64::consts::PI).sqrt();
    assert!((c[0] - k).abs() < 1e-12);
    assert!((c[2] - k / 2.0).abs() < 1e-12);
    assert!((c[4] + k / 24.0).abs() < 1e-12);
    assert_eq!(v["rank"], 2);
}

#[test]
fn hermite_coeffs_echo_rank() {
    let o = bmlab(&["hermite", "--coeffs", "0,0,1"]);
    assert!(o.status.success());
    assert_eq!(json_stdout(&o)["rank"], 2);
}

#[test]
fn hermite_unknown_name_is_input_error() {
    let o = bmlab(&["hermite", "--builtin", "nosuch"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nosuch"));
}

#[test]
fn hermite_writes_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.json");
    let o = bmlab(&["hermite", "--pointwise", "cube", "--qmax", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["rank"], 1);
}

#[test]
fn theory_central_fbm() {
    let o = bmlab(&["theory", "--model", "fbm:0.6", "--f", "abs", "--d", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_stdout(&o);
    assert_eq!(v["regime"]["regime"], "central");
    assert!(v["sigma2"]["value"].as_f64().unwrap() > 0.0);
    assert!(v["sigma2"]["tail_bound"].as_f64().unwrap() >= 0.0);
}

#[test]
fn theory_kd_closed_form() {
    let o = bmlab(&["theory", "--model", "fbm:0.9", "--d", "2", "--kd", "1,1"]);
    assert!(o.status.success());
    let v = json_stdout(&o);
    assert_eq!(v["regime"]["regime"], "noncentral");
    let kd = v["kd"]["scaled"].as_f64().unwrap();
    assert!((kd / 2.16 - 1.0).abs() < 1e-3, "{kd}");
}

#[test]
fn theory_log_constants_side_by_side() {
    let o = bmlab(&["theory", "--model", "fbm:0.75", "--coeffs", "0,0,1"]);
    assert!(o.status.success());
    let v = json_stdout(&o);
    assert_eq!(v["regime"]["regime"], "log_central");
    assert_eq!(v["log_constants"]["closed_form"], 0.28125);
    assert_eq!(v["log_constants"]["kernel_rate"], 0.5625);
}

#[test]
fn theory_requires_model() {
    assert_eq!(bmlab(&["theory", "--d", "2"]).status.code(), Some(2));
    assert_eq!(bmlab(&["theory", "--model", "nosuch:1"]).status.code(), Some(2));
}

#[test]
fn theory_summability_for_stationary_models() {
    let o = bmlab(&["theory", "--model", "fgn:0.6", "--builtin", "abs_centered"]);
    assert!(o.status.success());
    let v = json_stdout(&o);
    assert_eq!(v["summability"]["bh2_positive"], false);
}

#[test]
fn check_bifbm_passes() {
    let o = bmlab(&["check", "--model", "bifbm:0.6,0.75"]);
    assert!(o.status.success());
    let v = json_stdout(&o);
    assert_eq!(v["pass"], true);
    assert!((v["alpha"].as_f64().unwrap() - 0.9).abs() < 1e-12);
    assert!((v["alpha"].as_f64().unwrap() - 2.0 * v["beta"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn check_fbm_identity() {
    let o = bmlab(&["check", "--model", "fbm:0.75"]);
    assert!(o.status.success());
    let id = &json_stdout(&o)["h1"]["identity"];
    assert_eq!(id["holds"], true);
    let (a, b) = (id["psi_prime_at_1"].as_f64().unwrap(), id["beta_psi_at_1"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn check_custom_violation_names_bound() {
    let model = r#"{"kind":"custom","beta":0.5,"alpha":1.0,"lambda":0.5,"psi_terms":[[1,0],[1,3]]}"#;
    let o = bmlab(&["check", "--model", model]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("(a)"), "{err}");
}

#[test]
fn experiment_bundled_config_validates() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("s.json");
    let csv = dir.path().join("v.csv");
    let o = bmlab(&[
        "experiment",
        bundled_config().to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_valid(&v);
    assert!(v["empirical"][0]["ks"]["p_value"].is_number());
    assert!(v["theory"].is_object());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("replicate,kind,eps,t,value"));
}

#[test]
fn experiment_csv_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let csv = dir.path().join(name);
        let o = bmlab(&[
            "experiment",
            bundled_config().to_str().unwrap(),
            "--replicates",
            "30",
            "--csv",
            csv.to_str().unwrap(),
            "--summary",
            dir.path().join(format!("{name}.json")).to_str().unwrap(),
        ]);
        assert!(o.status.success());
        std::fs::read(csv).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn experiment_seed_override_changes_output() {
    let a = json_stdout(&bmlab(&["experiment", bundled_config().to_str().unwrap(), "--replicates", "20"]));
    let b = json_stdout(&bmlab(&[
        "experiment",
        bundled_config().to_str().unwrap(),
        "--replicates",
        "20",
        "--seed",
        "5",
    ]));
    assert_valid(&a);
    assert_ne!(a["config_hash"], b["config_hash"]);
    assert_ne!(a["empirical"][0]["mean"], b["empirical"][0]["mean"]);
}

#[test]
fn experiment_regime_conflict_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "log.json",
        &serde_json::json!({
            "model": "fgn:0.75",
            "function": {"hermite_coeffs": [0, 0, 1]},
            "eps": [0.0625],
            "times": [1.0],
            "replicates": 4,
            "seed": 1,
            "regime": "central"
        }),
    );
    assert_eq!(bmlab(&["experiment", cfg.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn experiment_bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &serde_json::json!({"model": "fgn:0.6"}));
    assert_eq!(bmlab(&["experiment", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(bmlab(&["experiment", "/nonexistent/config.json"]).status.code(), Some(2));
}

#[test]
fn experiment_length_and_noncentral_summaries_validate() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        (
            "len.json",
            serde_json::json!({
                "model": "fbm:0.55",
                "function": {"builtin": "abs_centered"},
                "functional": "length_fluct",
                "eps": [0.0625],
                "times": [0.5, 1.0],
                "replicates": 25,
                "seed": 3
            }),
        ),
        (
            "nc.json",
            serde_json::json!({
                "model": "fbm:0.9",
                "function": {"hermite_coeffs": [0, 0, 1]},
                "eps": [0.0625],
                "times": [1.0],
                "replicates": 25,
                "seed": 3
            }),
        ),
    ] {
        let cfg = write_config(dir.path(), name, &body);
        let o = bmlab(&["experiment", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert_valid(&json_stdout(&o));
    }
}
