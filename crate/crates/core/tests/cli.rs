use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use quantboost::{deviance, load_model, QuantileLossSpec, TrainConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quantboost"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read_table(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

/// Small simulated training file shared by several tests.
fn simulate(root: &Path, rows: usize) -> PathBuf {
    let dir = root.join("sim");
    ok(&[
        "simulate",
        "--out",
        s(&dir),
        "--train-rows",
        &rows.to_string(),
        "--test-rows",
        "50",
    ]);
    dir
}

fn quick_train(root: &Path, name: &str, data: &Path, extra: &[&str]) -> PathBuf {
    let dir = root.join(name);
    let mut args = vec![
        "train",
        "--out",
        s(&dir),
        "--data",
        s(data),
        "--response",
        "y",
        "--id-column",
        "row_id",
        "--learning-rate",
        "0.1",
        "--max-trees",
        "40",
        "--folds",
        "3",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    dir
}

#[test]
fn simulate_is_reproducible_and_seeded() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    let c = t.path().join("c");
    ok(&[
        "simulate",
        "--out",
        s(&a),
        "--train-rows",
        "100",
        "--test-rows",
        "20",
    ]);
    ok(&[
        "simulate",
        "--out",
        s(&b),
        "--train-rows",
        "100",
        "--test-rows",
        "20",
    ]);
    ok(&[
        "simulate",
        "--out",
        s(&c),
        "--train-rows",
        "100",
        "--test-rows",
        "20",
        "--seed",
        "7",
    ]);
    for f in ["train.csv", "test.csv", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.join("train.csv")).unwrap(),
        fs::read(c.join("train.csv")).unwrap()
    );

    let test = read_table(&a.join("test.csv"));
    assert_eq!(test.len(), 20);
    let header = csv::Reader::from_path(a.join("test.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["row_id", "x1", "x2", "x3", "y", "oracle_q0.75"]
    );
    assert_eq!(manifest(&a)["seed"], 1);
}

#[test]
fn simulate_defaults_and_count_mode() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    ok(&[
        "simulate",
        "--out",
        s(&d),
        "--count-mode",
        "--oracle-alpha",
        "0.5",
        "--oracle-alpha",
        "0.9",
    ]);
    let m = manifest(&d);
    assert_eq!(m["config"]["train_rows"], 5000);
    assert_eq!(m["config"]["predictors"], 3);
    let rows = read_table(&d.join("train.csv"));
    assert_eq!(rows.len(), 5000);
    for r in &rows {
        let y: f64 = r[4].parse().unwrap();
        assert!(y >= 0.0 && y.fract() == 0.0);
    }
    let header = csv::Reader::from_path(d.join("test.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    assert!(header.iter().any(|h| h == "oracle_q0.9"));

    let bad = run(&[
        "simulate",
        "--out",
        s(&t.path().join("e")),
        "--predictors",
        "2",
    ]);
    assert!(!bad.status.success());
}

#[test]
fn cost_ratio_flags() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), 120);
    let data = sim.join("train.csv");

    let ten = quick_train(t.path(), "ten", &data, &["--cost-ratio", "10:1"]);
    assert_eq!(
        manifest(&ten)["config"]["train"]["alpha"].as_f64().unwrap(),
        10.0 / 11.0
    );
    assert_eq!(
        load_model(ten.join("model.json")).unwrap().alpha,
        10.0 / 11.0
    );

    let even = quick_train(t.path(), "even", &data, &["--cost-ratio", "1:1"]);
    let half = quick_train(t.path(), "half", &data, &["--alpha", "0.5"]);
    assert_eq!(
        fs::read(even.join("model.json")).unwrap(),
        fs::read(half.join("model.json")).unwrap()
    );

    let both = run(&[
        "train",
        "--out",
        s(&t.path().join("x")),
        "--data",
        s(&data),
        "--response",
        "y",
        "--alpha",
        "0.5",
        "--cost-ratio",
        "1:1",
    ]);
    assert!(!both.status.success());
    let err = String::from_utf8(both.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    let v: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "usage");
}

#[test]
fn omitted_tuning_flags_use_defaults() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), 40);
    let out = t.path().join("def");
    let stdout = ok(&[
        "train",
        "--out",
        s(&out),
        "--data",
        s(&sim.join("train.csv")),
        "--response",
        "y",
        "--id-column",
        "row_id",
    ]);
    assert!(stdout.contains("best_iterations="));
    let cfg: TrainConfig =
        serde_json::from_value(manifest(&out)["config"]["train"].clone()).unwrap();
    assert_eq!(cfg, TrainConfig::default());
    assert_eq!(cfg.learning_rate, 0.001);
    assert_eq!(cfg.max_trees, 6000);
    assert_eq!(cfg.splits_per_tree, 10);
    assert_eq!(cfg.min_node_size, 5);
    assert_eq!(cfg.subsample_fraction, 0.5);
    assert_eq!(cfg.cv_folds, 10);
    assert_eq!(read_table(&out.join("cv_curve.csv")).len(), 6000);
}

#[test]
fn train_reruns_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), 150);
    let data = sim.join("train.csv");
    let a = quick_train(t.path(), "a", &data, &["--alpha", "0.75"]);
    let b = quick_train(t.path(), "b", &data, &["--alpha", "0.75"]);
    for f in ["model.json", "cv_curve.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["config"], mb["config"]);
    assert_eq!(ma["inputs"], mb["inputs"]);
    assert_eq!(
        ma["outputs"],
        serde_json::json!(["cv_curve.csv", "model.json"])
    );
    let c = quick_train(t.path(), "c", &data, &["--alpha", "0.75", "--seed", "2"]);
    assert_ne!(
        fs::read(a.join("model.json")).unwrap(),
        fs::read(c.join("model.json")).unwrap()
    );
}

#[test]
fn impute_reproduces_training_fit_and_stages() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), 150);
    let data = sim.join("train.csv");
    let trained = quick_train(t.path(), "m", &data, &["--alpha", "0.75"]);
    let model_path = trained.join("model.json");
    let model = load_model(&model_path).unwrap();

    let full = t.path().join("full");
    ok(&[
        "impute",
        "--out",
        s(&full),
        "--model",
        s(&model_path),
        "--data",
        s(&data),
        "--id-column",
        "row_id",
    ]);
    let preds = read_table(&full.join("predictions.csv"));
    let train_rows = read_table(&data);
    assert_eq!(preds.len(), train_rows.len());
    let y: Vec<f64> = train_rows.iter().map(|r| r[4].parse().unwrap()).collect();
    let f: Vec<f64> = preds.iter().map(|r| r[1].parse().unwrap()).collect();
    for (p, r) in preds.iter().zip(&train_rows) {
        assert_eq!(p[0], r[0]);
    }
    // the in-loop fit is summarised by the recorded training deviance
    let d = deviance(
        &y,
        &f,
        &vec![1.0; y.len()],
        QuantileLossSpec::new(0.75).unwrap(),
    )
    .unwrap();
    assert_eq!(d, *model.training.deviance_trace.last().unwrap());

    let zero = t.path().join("zero");
    ok(&[
        "impute",
        "--out",
        s(&zero),
        "--model",
        s(&model_path),
        "--data",
        s(&sim.join("test.csv")),
        "--id-column",
        "row_id",
        "--n-trees",
        "0",
    ]);
    for r in read_table(&zero.join("predictions.csv")) {
        assert_eq!(r[1].parse::<f64>().unwrap(), model.f0);
    }

    let too_many = run(&[
        "impute",
        "--out",
        s(&t.path().join("x")),
        "--model",
        s(&model_path),
        "--data",
        s(&data),
        "--n-trees",
        "100000",
    ]);
    assert!(!too_many.status.success());

    fs::write(t.path().join("narrow.csv"), "row_id,x1,x2\na,0.1,0.2\n").unwrap();
    let mismatch = run(&[
        "impute",
        "--out",
        s(&t.path().join("y")),
        "--model",
        s(&model_path),
        "--data",
        s(&t.path().join("narrow.csv")),
        "--id-column",
        "row_id",
    ]);
    assert!(!mismatch.status.success());
    let v: Value = serde_json::from_slice(&mismatch.stderr).unwrap();
    assert_eq!(v["error"], "schema");
}

#[test]
fn impute_passes_stratum_through_and_compares_cost_ratios() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), 150);
    let data = sim.join("train.csv");
    let even = quick_train(t.path(), "even", &data, &["--cost-ratio", "1:1"]);
    let ten = quick_train(t.path(), "ten", &data, &["--cost-ratio", "10:1"]);

    let mut text = String::from("row_id,x1,x2,x3,spa\n");
    for (i, x) in [0.1, 0.5, 0.9].iter().enumerate() {
        text.push_str(&format!(
            "u{i},{x},0.5,0.5,{}\n",
            if i < 2 { "A" } else { "B" }
        ));
    }
    let unsampled = t.path().join("unsampled.csv");
    fs::write(&unsampled, text).unwrap();

    let mut spreads = Vec::new();
    for m in [&even, &ten] {
        let out = m.join("imp");
        ok(&[
            "impute",
            "--out",
            s(&out),
            "--model",
            s(&m.join("model.json")),
            "--data",
            s(&unsampled),
            "--id-column",
            "row_id",
            "--stratum-column",
            "spa",
        ]);
        let rows = read_table(&out.join("predictions.csv"));
        assert_eq!(rows[2][2], "B");
        spreads.push(
            rows.iter()
                .map(|r| r[1].parse::<f64>().unwrap())
                .collect::<Vec<_>>(),
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&spreads[1]) > mean(&spreads[0]));
}

fn write(path: &Path, text: &str) -> PathBuf {
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

fn aggregate(root: &Path, name: &str, preds: &Path, observed: Option<&Path>) -> Output {
    let out = root.join(name);
    let mut args = vec!["aggregate", "--out", s(&out), "--predictions", s(preds)];
    if let Some(o) = observed {
        args.extend(["--observed", s(o)]);
    }
    run(&args)
}

#[test]
fn aggregate_examples() {
    let t = tempfile::tempdir().unwrap();
    let root = t.path();
    let preds = write(
        &root.join("p.csv"),
        "row_id,imputed_value,stratum\nc,10,S\n",
    );
    let obs = write(
        &root.join("o.csv"),
        "row_id,stratum,observed\na,S,3\nb,S,5\n",
    );
    assert!(aggregate(root, "one", &preds, Some(&obs)).status.success());
    let rows = read_table(&root.join("one/totals.csv"));
    assert_eq!(rows[0], ["stratum", "S", "2", "1", "8", "10", "18"]);
    assert_eq!(rows[1], ["grand", "", "2", "1", "8", "10", "18"]);

    let empty = write(&root.join("e.csv"), "row_id,imputed_value,stratum\n");
    assert!(aggregate(root, "none", &empty, Some(&obs)).status.success());
    let rows = read_table(&root.join("none/totals.csv"));
    assert_eq!(rows[0][6], "8");
    assert_eq!(rows[1][6], "8");

    let overlap = write(
        &root.join("ov.csv"),
        "row_id,imputed_value,stratum\na,1,S\n",
    );
    let bad = aggregate(root, "ov", &overlap, Some(&obs));
    assert!(!bad.status.success());
    let v: Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(v["error"], "overlapping_row_id");

    let dup = write(
        &root.join("dup.csv"),
        "row_id,imputed_value,stratum\nz,1,S\nz,2,T\n",
    );
    let v: Value = serde_json::from_slice(&aggregate(root, "dup", &dup, None).stderr).unwrap();
    assert_eq!(v["error"], "duplicate_row_id");
}

#[test]
fn aggregate_is_row_order_invariant() {
    let t = tempfile::tempdir().unwrap();
    let root = t.path();
    let vals = [0.1, 1e16, -1e16, 0.2, 3.3, 7.25, 0.3, 1e-3];
    let line = |i: usize| format!("r{i},{},{}\n", vals[i], if i.is_multiple_of(3) { "A" } else { "B" });
    let fwd: String = (0..vals.len()).map(line).collect();
    let rev: String = (0..vals.len()).rev().map(line).collect();
    let f = write(
        &root.join("f.csv"),
        &format!("row_id,imputed_value,stratum\n{fwd}"),
    );
    let r = write(
        &root.join("r.csv"),
        &format!("row_id,imputed_value,stratum\n{rev}"),
    );
    assert!(aggregate(root, "f", &f, None).status.success());
    assert!(aggregate(root, "r", &r, None).status.success());
    assert_eq!(
        fs::read(root.join("f/totals.csv")).unwrap(),
        fs::read(root.join("r/totals.csv")).unwrap()
    );
}

#[test]
fn diagnose_tables() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), 150);
    let data = sim.join("train.csv");
    let trained = quick_train(t.path(), "m", &data, &[]);
    let model = trained.join("model.json");

    let skip = t.path().join("skip");
    ok(&[
        "diagnose",
        "--out",
        s(&skip),
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--id-column",
        "row_id",
        "--pd-points",
        "2",
        "--skip-baseline",
    ]);
    let header = csv::Reader::from_path(skip.join("influence.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["predictor", "empirical"]
    );
    assert!(!skip.join("baseline_samples.csv").exists());
    let total: f64 = read_table(&skip.join("influence.csv"))
        .iter()
        .map(|r| r[1].parse::<f64>().unwrap())
        .sum();
    assert!((total - 100.0).abs() < 1e-9);

    let pd = read_table(&skip.join("pd.csv"));
    assert_eq!(pd.len(), 6);
    let train_rows = read_table(&data);
    for (j, name) in ["x1", "x2", "x3"].iter().enumerate() {
        let col: Vec<f64> = train_rows
            .iter()
            .map(|r| r[j + 1].parse().unwrap())
            .collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(pd[2 * j][0], *name);
        assert_eq!(pd[2 * j][1].parse::<f64>().unwrap(), lo);
        assert_eq!(pd[2 * j + 1][1].parse::<f64>().unwrap(), hi);
    }
    assert_eq!(read_table(&skip.join("deciles.csv")).len(), 27);

    let full = t.path().join("full");
    ok(&[
        "diagnose",
        "--out",
        s(&full),
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--id-column",
        "row_id",
        "--response",
        "y",
        "--baseline-replicates",
        "2",
        "--baseline-max-trees",
        "10",
    ]);
    let header = csv::Reader::from_path(full.join("influence.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["predictor", "empirical", "baseline_mean", "baseline_sd"]
    );
    assert_eq!(read_table(&full.join("baseline_samples.csv")).len(), 6);
    assert_eq!(read_table(&full.join("pd.csv")).len(), 300);
    let m = manifest(&full);
    assert_eq!(m["config"]["baseline_replicates"], 2);
    assert_eq!(m["config"]["baseline_config"]["max_trees"], 10);

    let no_response = run(&[
        "diagnose",
        "--out",
        s(&t.path().join("x")),
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--id-column",
        "row_id",
    ]);
    assert!(!no_response.status.success());
}

#[test]
fn diagnose_defaults() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), 60);
    let data = sim.join("train.csv");
    let trained = quick_train(t.path(), "m", &data, &[]);
    let out = t.path().join("d");
    ok(&[
        "diagnose",
        "--out",
        s(&out),
        "--model",
        s(&trained.join("model.json")),
        "--data",
        s(&data),
        "--id-column",
        "row_id",
        "--skip-baseline",
    ]);
    let m = manifest(&out);
    assert_eq!(m["config"]["pd_points"], 100);
    let help = ok(&["diagnose", "--help"]);
    assert!(help.contains("[default: 50]"));
}

#[test]
fn errors_are_single_json_lines() {
    let t = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--out",
        s(&t.path().join("o")),
        "--data",
        "/nonexistent.csv",
        "--response",
        "y",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    let v: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "io");
    assert!(!t.path().join("o").exists());

    let out = run(&["bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1);
}
