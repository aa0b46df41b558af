use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn daml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_daml"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = daml(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_train_config(out_dir: &Path) -> Value {
    serde_json::json!({
        "data": {"source": "synthetic1d", "seed": 0},
        "model": {"family": "tgmm", "n_components": 2},
        "train": {"k": 5, "step_size": 0.1, "max_epochs": 20, "eval_every": 5, "eval_samples": 30, "grad_tol": 0.0},
        "test_trials": 5,
        "test_samples": 50,
        "out_dir": out_dir,
    })
}

#[test]
fn demo_table_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let t0 = Instant::now();
    ok(&["demo-appb", "--trials", "1", "--out", s(&a)]);
    assert!(t0.elapsed().as_secs_f64() < 1.0, "one trial took {:?}", t0.elapsed());

    ok(&["demo-appb", "--trials", "300", "-M", "2000", "--seed", "5", "--out", s(&a)]);
    ok(&["demo-appb", "--trials", "300", "-M", "2000", "--seed", "5", "--out", s(&b)]);
    let text = read(&a);
    assert_eq!(text, read(&b));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# schema_version 1");
    assert!(lines[1].starts_with("estimator,k,bpr_mean,bpr_std_err,freq_A1"));
    assert_eq!(lines.len(), 2 + 6);
    // Ratio ranking at K=3 picks the steady sites in every trial.
    let ratio3: Vec<&str> = lines.iter().find(|l| l.starts_with("ratio,3,")).unwrap().split(',').collect();
    assert_eq!(&ratio3[4..7], &["1", "1", "1"]);
}

#[test]
fn train_outputs_are_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let cfg = write_json(dir.path(), &format!("{name}.json"), &small_train_config(&out));
        ok(&["--no-timing", "train", "--config", s(&cfg)]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["metrics.csv", "best.params", "state.params", "trials.csv"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let metrics = read(&a.join("metrics.csv"));
    assert!(metrics.starts_with("# schema_version 1\nepoch,objective,train_nll,train_bpr_mean,val_nll,val_bpr_mean,grad_norm,wall_ms\n"));
    assert_eq!(metrics.lines().count(), 2 + 21);

    let manifest: Value = serde_json::from_str(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seeds"], serde_json::json!([0]));
    assert!(manifest.get("wall_ms").is_none());
    assert!(manifest["git_describe"].as_str().is_some_and(|g| !g.is_empty()));

    // The manifest alone reruns the result.
    let c = dir.path().join("c");
    ok(&["--no-timing", "train", "--config", s(&a.join("manifest.json")), "--out-dir", s(&c)]);
    assert_eq!(read(&a.join("trials.csv")), read(&c.join("trials.csv")));
    assert_eq!(read(&a.join("best.params")), read(&c.join("best.params")));
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let cfg = write_json(dir.path(), "full.json", &small_train_config(&full));
    ok(&["--no-timing", "train", "--config", s(&cfg)]);

    let split = dir.path().join("split");
    ok(&["--no-timing", "train", "--config", s(&cfg), "--out-dir", s(&split), "--max-epochs", "10"]);
    let state = split.join("state.params");
    ok(&["--no-timing", "train", "--config", s(&cfg), "--out-dir", s(&split), "--resume", s(&state)]);
    for f in ["metrics.csv", "best.params", "state.params"] {
        assert_eq!(read(&full.join(f)), read(&split.join(f)), "{f}");
    }
}

#[test]
fn grid_runs_are_selected_and_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let mut cfg = small_train_config(&out);
    cfg["grid"] = serde_json::json!({"seeds": [0, 1]});
    cfg["train"]["max_epochs"] = 5.into();
    let path = write_json(dir.path(), "grid.json", &cfg);
    ok(&["train", "--config", s(&path)]);
    let trials = read(&out.join("trials.csv"));
    let rows: Vec<&str> = trials.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().filter(|r| r.contains(",true,")).count(), 1);
    assert!(out.join("run_001").join("best.params").exists());
    let manifest: Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert!(manifest["wall_ms"].is_u64());
}

#[test]
fn evaluate_checkpoint_and_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_json(dir.path(), "run.json", &small_train_config(&out));
    ok(&["train", "--config", s(&cfg)]);

    let eval_cfg = write_json(dir.path(), "eval.json", &serde_json::json!({"data": {"source": "synthetic1d"}, "k": 5}));
    let ck = out.join("best.params");
    let o = ok(&["evaluate", "--config", s(&eval_cfg), "--checkpoint", s(&ck), "-M", "50", "--trials", "4"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    let r = &v["report"];
    assert_eq!(r["n_periods"], 50);
    assert_eq!(r["bpr_trials"].as_array().unwrap().len(), 4);
    let b = r["bpr_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&b));
    assert!(r["nll_mean"].as_f64().unwrap().is_finite());

    // The chance ranker forecasts zero, so its MAE is the mean count.
    let panel = dir.path().join("panel.csv");
    ok(&["gen-data", "--generator", "negbin", "--seed", "4", "--sites", "8", "--periods", "40", "--out", s(&panel)]);
    let o = ok(&["evaluate", "--data-csv", s(&panel), "--baseline", "chance", "--k", "2", "--trials", "50"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&panel).unwrap();
    // 40 periods: train 0..28, validation 28..34, test 34..40.
    let test: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap())
        .filter(|r| r[1].parse::<i64>().unwrap() >= 34)
        .map(|r| r[2].parse::<f64>().unwrap())
        .collect();
    assert_eq!(test.len(), 6 * 8);
    let mean_abs = test.iter().sum::<f64>() / test.len() as f64;
    assert!((v["report"]["mae"].as_f64().unwrap() - mean_abs).abs() < 1e-9);
    assert!(v["report"]["loglik"].is_null());
    assert!(v["report"]["bpr_mean"].as_f64().unwrap() < 0.6);
}

#[test]
fn pareto_with_empty_epsilon_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("frontier");
    let cfg = write_json(
        dir.path(),
        "pareto.json",
        &serde_json::json!({
            "data": {"source": "synthetic1d"},
            "model": {"family": "tgmm", "n_components": 2},
            "pareto": {"base": {"k": 5, "max_epochs": 4, "eval_samples": 20, "n_samples": 20, "n_perturbations": 20},
                       "test_trials": 3, "test_samples": 20},
            "out_dir": out,
        }),
    );
    ok(&["--threads", "2", "pareto", "--config", s(&cfg), "--epsilons", ""]);
    let trials = read(&out.join("trials.csv"));
    let lines: Vec<&str> = trials.lines().collect();
    assert_eq!(lines[0], "# schema_version 1");
    assert_eq!(lines[1].split(',').count(), 20);
    let labels: Vec<&str> = lines[2..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["nll", "bpr"]);
    assert!(out.join("nll.params").exists() && out.join("bpr.params").exists());
    assert_eq!(read(&out.join("test_bpr_trials.csv")).lines().count(), 2 + 2 * 3);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |o: Output| o.status.code().unwrap();

    let bad_key = write_json(dir.path(), "bad.json", &serde_json::json!({"data": {"source": "synthetic1d"}, "model": {"family": "negbin"}, "trian": {}}));
    let o = daml(&["train", "--config", s(&bad_key)]);
    assert_eq!(code(o.clone()), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trian"));

    let mut bad_k = small_train_config(&dir.path().join("x"));
    bad_k["train"]["k"] = 9.into();
    let p = write_json(dir.path(), "bad_k.json", &bad_k);
    assert_eq!(code(daml(&["train", "--config", s(&p)])), 2);

    assert_eq!(code(daml(&["train", "--config", s(&dir.path().join("missing.json"))])), 4);
    let missing_csv = write_json(
        dir.path(),
        "csv.json",
        &serde_json::json!({"data": {"source": "csv", "path": dir.path().join("nope.csv")}, "model": {"family": "negbin"}, "out_dir": dir.path().join("y")}),
    );
    assert_eq!(code(daml(&["train", "--config", s(&missing_csv)])), 4);

    let mut blowup = small_train_config(&dir.path().join("z"));
    blowup["train"]["step_size"] = 1e300.into();
    let p = write_json(dir.path(), "blowup.json", &blowup);
    assert_eq!(code(daml(&["train", "--config", s(&p)])), 3);

    assert_eq!(code(daml(&["train"])), 2);
    assert_eq!(code(daml(&["--help"])), 0);
}
