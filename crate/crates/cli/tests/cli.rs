use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn elast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let o = elast(args);
    assert!(
        o.status.success(),
        "elast {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn gaussian_spec() -> Value {
    json!({
        "kind": "cross_section",
        "spec": {
            "coef_law": {"type": "gaussian_indep", "a_const": 0.0, "eps_mean": 0.5, "eps_var": 0.25},
            "regressor_law": {"type": "log_uniform", "lo": 1.0, "hi": std::f64::consts::E.powi(2)}
        }
    })
}

fn degenerate_spec(eps: f64, regressor: Value) -> Value {
    json!({
        "kind": "cross_section",
        "spec": {
            "coef_law": {"type": "degenerate", "a": 0.3, "eps": eps},
            "regressor_law": regressor
        }
    })
}

/// Simulates into `dir/name.csv` and returns the CSV path.
fn simulate(dir: &Path, name: &str, dgp: Value, n: usize, seed: u64) -> PathBuf {
    let cfg = write_json(
        dir,
        &format!("{name}_sim.json"),
        &json!({"schema_version": 1, "dgp": dgp, "n": n, "seed": seed, "oracle_draws": 200000}),
    );
    let out = dir.join(format!("{name}.csv"));
    run_ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    out
}

fn estimate(dir: &Path, name: &str, cfg: Value) -> (Output, PathBuf) {
    let c = write_json(dir, &format!("{name}_cfg.json"), &cfg);
    let out = dir.join(format!("{name}.json"));
    let o = elast(&["estimate", "--config", c.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (o, out)
}

#[test]
fn simulate_degenerate_gives_constant_columns() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "d", degenerate_spec(0.8, json!({"type": "fixed", "x": 2.0})), 20, 1);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| *r == rows[0]));
    let side = read_json(&csv.with_extension("json"));
    assert_eq!(side["schema_version"], 1);
    assert_eq!(side["seed"], 1);
    assert!(side["config_hash"].as_str().unwrap().len() == 64);
    assert!(side["dataset_hash"].as_str().unwrap().len() == 64);
    assert!((side["oracle"]["value"].as_f64().unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn simulate_sidecar_oracle_matches_gaussian_closed_form() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "g", gaussian_spec(), 50, 2);
    let side = read_json(&csv.with_extension("json"));
    let value = side["oracle"]["value"].as_f64().unwrap();
    let se = side["oracle"]["std_error"].as_f64().unwrap();
    // eps_mean + eps_var * E[log X] with log X ~ U[0, 2]
    assert!((value - 0.75).abs() <= 4.0 * se + 1e-9, "{value} +- {se}");
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ca = simulate(a.path(), "g", gaussian_spec(), 200, 9);
    let cb = simulate(b.path(), "g", gaussian_spec(), 200, 9);
    assert_eq!(std::fs::read(&ca).unwrap(), std::fs::read(&cb).unwrap());
    assert_eq!(
        std::fs::read(ca.with_extension("json")).unwrap(),
        std::fs::read(cb.with_extension("json")).unwrap()
    );
}

#[test]
fn simulate_invalid_spec_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = degenerate_spec(0.5, json!({"type": "log_uniform", "lo": 3.0, "hi": 1.0}));
    let cfg = write_json(dir.path(), "s.json", &json!({"schema_version": 1, "dgp": bad, "n": 10}));
    let out = dir.path().join("x.csv");
    let o = elast(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn config_validation_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    let unknown = write_json(
        dir.path(),
        "u.json",
        &json!({"schema_version": 1, "dgp": gaussian_spec(), "n": 10, "bogus": 1}),
    );
    let o = elast(&["simulate", "--config", unknown.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let version = write_json(dir.path(), "v.json", &json!({"schema_version": 99, "dgp": gaussian_spec(), "n": 10}));
    let o = elast(&["simulate", "--config", version.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema_version"));
    let o = elast(&["simulate", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ols_on_noiseless_fixture_reports_coefficient_two() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "d", degenerate_spec(2.0, json!({"type": "log_uniform", "lo": 1.0, "hi": 10.0})), 100, 3);
    let (o, out) = estimate(
        dir.path(),
        "ols",
        json!({"schema_version": 1, "data": csv, "method": "ols"}),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    assert!((r["report"]["theta"].as_f64().unwrap() - 2.0).abs() < 1e-10);
    assert!((r["report"]["diagnostics"]["coefficients"]["coef"][1].as_f64().unwrap() - 2.0).abs() < 1e-10);
    let side = read_json(&csv.with_extension("json"));
    assert_eq!(r["dataset_hash"], side["dataset_hash"]);
    assert_eq!(r["schema_version"], 1);
}

#[test]
fn dream_recovers_sidecar_oracle_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "g", gaussian_spec(), 1000, 4);
    let oracle = read_json(&csv.with_extension("json"))["oracle"]["value"].as_f64().unwrap();
    let cfg = json!({
        "schema_version": 1, "data": csv, "method": "dream", "seed": 11,
        "learner": {"hidden": [16, 16], "learning_rate": 0.03}
    });
    let (o, out) = estimate(dir.path(), "dream", cfg.clone());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    let theta = r["report"]["theta"].as_f64().unwrap();
    let se = r["report"]["se"].as_f64().unwrap();
    assert!((theta - oracle).abs() <= 3.0 * se, "theta {theta} se {se} oracle {oracle}");
    assert_eq!(r["report"]["K"], 5);
    let (_, again) = estimate(dir.path(), "dream2", cfg);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn dream_on_binary_treatment_routes_to_manning() {
    let dir = TempDir::new().unwrap();
    let spec = json!({
        "kind": "cross_section",
        "spec": {
            "coef_law": {"type": "gaussian_indep", "a_const": 0.0, "eps_mean": 0.3, "eps_var": 0.1},
            "regressor_law": {"type": "bernoulli", "p": 0.5},
            "convention": "semi_elasticity"
        }
    });
    let csv = simulate(dir.path(), "b", spec, 300, 5);
    let (o, out) = estimate(dir.path(), "bin", json!({"schema_version": 1, "data": csv, "method": "dream"}));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("notice"));
    let r = read_json(&out);
    assert_eq!(r["report"]["method"], "manning_binary");
    assert!(!r["report"]["notices"].as_array().unwrap().is_empty());
}

#[test]
fn missing_column_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "g", gaussian_spec(), 50, 6);
    let cfg = write_json(dir.path(), "e.json", &json!({"schema_version": 1, "data": csv, "method": "ols"}));
    let o = elast(&["estimate", "--config", cfg.to_str().unwrap(), "--controls", "income"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("income"));
    let o = elast(&["estimate", "--config", cfg.to_str().unwrap(), "--x", "price"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("price"));
}

#[test]
fn column_flags_rebind_headers() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("named.csv");
    let mut text = String::from("q,logp\n");
    for i in 1..=40 {
        let lp = i as f64 / 10.0;
        text.push_str(&format!("{},{}\n", (1.0 - 1.5 * lp).exp(), lp));
    }
    std::fs::write(&csv, text).unwrap();
    let cfg = write_json(dir.path(), "e.json", &json!({"schema_version": 1, "data": "named.csv", "method": "ppml"}));
    let o = run_ok(&["estimate", "--config", cfg.to_str().unwrap(), "--y", "q", "--x", "logp"]);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((r["report"]["theta"].as_f64().unwrap() + 1.5).abs() < 1e-8);
    assert_eq!(r["config"]["columns"]["y"], "q");
}

#[test]
fn estimator_failure_exits_3() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "c", degenerate_spec(1.0, json!({"type": "fixed", "x": 2.0})), 30, 7);
    let (o, _) = estimate(dir.path(), "sing", json!({"schema_version": 1, "data": csv, "method": "ols"}));
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("singular"));
}

#[test]
fn compare_identical_and_mismatched_reports() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let c1 = simulate(d, "g1", gaussian_spec(), 300, 8);
    let c2 = simulate(d, "g2", gaussian_spec(), 300, 9);
    let (_, a) = estimate(d, "a", json!({"schema_version": 1, "data": c1, "method": "ols"}));
    let (_, b) = estimate(d, "b", json!({"schema_version": 1, "data": c1, "method": "ppml"}));
    let (_, other) = estimate(d, "o", json!({"schema_version": 1, "data": c2, "method": "ols"}));

    let same = write_json(d, "same.json", &json!({"schema_version": 1, "a": a, "b": a}));
    let o = run_ok(&["compare", "--config", same.to_str().unwrap()]);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["result"]["p_value"], 1.0);
    assert_eq!(r["result"]["significant"], false);
    assert_eq!(r["dataset_hash"], read_json(&a)["dataset_hash"]);

    let ab = write_json(d, "ab.json", &json!({"schema_version": 1, "a": a, "b": b}));
    let o = run_ok(&["compare", "--config", ab.to_str().unwrap()]);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["method_a"], "ols");
    assert_eq!(r["method_b"], "ppml");

    let bad = write_json(d, "bad.json", &json!({"schema_version": 1, "a": a, "b": other}));
    let o = elast(&["compare", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("different datasets"));
}

#[test]
fn compare_batch_writes_summary_table() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut batch = Vec::new();
    for s in 0..3 {
        let c = simulate(d, &format!("g{s}"), gaussian_spec(), 200, 20 + s);
        let (_, a) = estimate(d, &format!("ols{s}"), json!({"schema_version": 1, "data": c, "method": "ols"}));
        let (_, b) = estimate(d, &format!("ppml{s}"), json!({"schema_version": 1, "data": c, "method": "ppml"}));
        batch.push(json!({"a": a, "b": b}));
    }
    let cfg = write_json(d, "batch.json", &json!({"schema_version": 1, "batch": batch, "label": "OLS vs PPML"}));
    let out = d.join("table.csv");
    run_ok(&["compare", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "comparison,No Change,Sig. Different,Effect Increase,Effect Decrease,Sign Change"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "OLS vs PPML");
    let counts: Vec<usize> = row[1..].iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(counts[0] + counts[1], 3);
    assert_eq!(counts[1], counts[2] + counts[3] + counts[4]);
    let side = read_json(&out.with_extension("json"));
    assert_eq!(side["comparisons"].as_array().unwrap().len(), 3);
    assert_eq!(side["schema_version"], 1);
}

fn coverage_cfg(replications: usize, methods: Value) -> Value {
    json!({
        "schema_version": 1,
        "study": {
            "dgp": degenerate_spec(0.6, json!({"type": "log_uniform", "lo": 1.0, "hi": 4.0})),
            "n": 60,
            "replications": replications,
            "methods": methods,
            "folds": 2,
            "seed": 5,
            "oracle_draws": 10
        }
    })
}

#[test]
fn coverage_degenerate_fixture_is_unbiased_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = write_json(d, "cov.json", &coverage_cfg(50, json!(["ols", "ppml", "2sls"])));
    let out1 = d.join("run1.json");
    let out2 = d.join("run2.json");
    run_ok(&["coverage", "--config", cfg.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    run_ok(&["coverage", "--config", cfg.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    let r = read_json(&out1);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["seed"], 5);
    for m in r["summary"]["methods"].as_array().unwrap() {
        if m["method"] == "2sls" {
            // no instruments in the fixture: every replication fails and is recorded
            assert_eq!(m["failures"], 50);
        } else {
            assert_eq!(m["failures"], 0);
            assert!(m["bias"].as_f64().unwrap().abs() <= 1e-6);
        }
    }
    let rec1 = std::fs::read(d.join("run1_records.csv")).unwrap();
    let rec2 = std::fs::read(d.join("run2_records.csv")).unwrap();
    assert_eq!(rec1, rec2);
    assert_eq!(String::from_utf8(rec1).unwrap().lines().count(), 151);
    assert!(d.join("run1_summary.csv").exists());
    let strip = |v: Value| {
        let mut v = v;
        v.as_object_mut().unwrap().remove("records_file");
        v.as_object_mut().unwrap().remove("summary_file");
        v
    };
    assert_eq!(strip(read_json(&out1)), strip(read_json(&out2)));
}

#[test]
fn coverage_needs_fifty_replications() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(dir.path(), "cov.json", &coverage_cfg(10, json!(["ols"])));
    let out = dir.path().join("c.json");
    let o = elast(&["coverage", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(dir.path(), "s.json", &json!({"schema_version": 1, "dgp": gaussian_spec(), "n": 30, "seed": 1}));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    run_ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    run_ok(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "2", "--out", b.to_str().unwrap()]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_json(&b.with_extension("json"))["seed"], 2);
}
