use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dipole_tree::data::{load_csv_with, CsvSchema};
use dipole_tree::pipeline;
use dipole_tree::tree::SurvivalTree;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dipole-tree"))
}

fn remission() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/remission.csv")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_seeded_and_writes_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        ok(&["simulate", "--preset", "elliptical", "--n", "100", "--seed", "7", "--out", s(out)]);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 101);
    assert_eq!(text.lines().next().unwrap(), "x1,x2,time,status");

    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.csv.config.json")).unwrap()).unwrap();
    assert_eq!(cfg["n"], 100);
    assert_eq!(cfg["seed"], 7);
    assert_eq!(cfg["name"], "elliptical");
}

#[test]
fn simulate_reports_its_censoring() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let o = ok(&["simulate", "--preset", "planar", "--p", "4", "--n", "200", "--seed", "3", "--out", s(&out)]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    let reported: f64 = stdout.trim().rsplit(' ').next().unwrap().parse().unwrap();
    let mut r = csv::Reader::from_path(&out).unwrap();
    let col = r.headers().unwrap().iter().position(|h| h == "status").unwrap();
    let censored = r.records().filter(|rec| &rec.as_ref().unwrap()[col] == "0").count();
    assert_eq!(reported, censored as f64 / 200.0);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(run(&["simulate", "--preset", "spiral", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--preset", "planar", "--p", "3", "--out", s(&out)]).status.code(), Some(2));
    let data = remission();
    assert_eq!(run(&["fit", s(&data), "--kernel", "cubic"]).status.code(), Some(2));
    assert_eq!(run(&["fit", s(&data), "--kappa", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["fit", s(&data), "--qp-method", "newton"]).status.code(), Some(2));
    assert_eq!(run(&["evaluate", s(&data)]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let missing = dir.path().join("nope.csv");
    assert_eq!(run(&["fit", s(&missing), "--out", s(&model)]).status.code(), Some(3));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time,status,x\n1,1,0.5\n2,1,oops\n").unwrap();
    assert_eq!(run(&["fit", s(&bad), "--out", s(&model)]).status.code(), Some(3));
    std::fs::write(&bad, "time,status,x\n1,2,0.5\n2,1,1\n").unwrap();
    assert_eq!(run(&["fit", s(&bad), "--out", s(&model)]).status.code(), Some(3));
    std::fs::write(&bad, "t,status,x\n1,1,0.5\n").unwrap();
    assert_eq!(run(&["fit", s(&bad), "--out", s(&model)]).status.code(), Some(3));
    assert_eq!(run(&["predict", s(&remission()), "--model", s(&missing)]).status.code(), Some(3));
}

#[test]
fn tiny_fit_is_one_leaf_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny.csv");
    std::fs::write(&data, "time,status,x\n1,1,0.1\n2,1,0.4\n3,0,0.2\n4,1,0.9\n").unwrap();
    let model = dir.path().join("m.json");
    ok(&["fit", s(&data), "--out", s(&model)]);
    let tree = SurvivalTree::load(&model).unwrap();
    assert_eq!(tree.node_count(), 1);
    assert_eq!(tree.version, "dipole-tree/1");
    let again = SurvivalTree::from_json(&tree.to_json().unwrap()).unwrap();
    assert_eq!(again, tree);

    // a single leaf ranks nobody, and its Brier curve is the leaf curve's
    let report = dir.path().join("eval.json");
    ok(&["evaluate", s(&data), "--model", s(&model), "--out", s(&report)]);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(rep["ci"].is_null());
    let d = load_csv_with(&data, &CsvSchema::default(), &tree.standardization).unwrap();
    let expect = pipeline::evaluate_tree(&tree, &d).unwrap();
    assert_eq!(rep["ibs"].as_f64().unwrap(), expect.ibs);
}

#[test]
fn fit_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for m in [&a, &b] {
        ok(&["fit", s(&remission()), "--seed", "11", "--out", s(m)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn predictions_follow_the_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let preds = dir.path().join("p.csv");
    let report = dir.path().join("fit.json");
    ok(&[
        "fit",
        s(&remission()),
        "--kernel",
        "linear",
        "--validation-fraction",
        "0",
        "--bootstrap",
        "5",
        "--out",
        s(&model),
        "--report",
        s(&report),
    ]);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["selection"], "bootstrap:5");
    assert_eq!(rep["n_train"], 42);

    ok(&["predict", s(&remission()), "--model", s(&model), "--out", s(&preds)]);
    let tree = SurvivalTree::load(&model).unwrap();
    assert_eq!(rep["nodes_pruned"], tree.node_count());
    let d = load_csv_with(remission(), &CsvSchema::default(), &tree.standardization).unwrap();
    let mut r = csv::Reader::from_path(&preds).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["row", "leaf", "median", "median_fallback"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 42);
    for (i, rec) in rows.iter().enumerate() {
        let leaf = tree.leaf_for(d.covariates(i)).unwrap();
        assert_eq!(rec[1].parse::<usize>().unwrap(), leaf.id);
        assert_eq!(rec[2].parse::<f64>().unwrap(), leaf.median);
    }
}

#[test]
fn evaluate_writes_curve_and_cv_report() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let curve = dir.path().join("curve.csv");
    ok(&["fit", s(&remission()), "--out", s(&model)]);
    let o = ok(&["evaluate", s(&remission()), "--model", s(&model), "--curve", s(&curve)]);
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["n_test"], 42);
    let pts = rep["brier_curve"].as_array().unwrap();
    let lines = std::fs::read_to_string(&curve).unwrap().lines().count();
    assert_eq!(lines, pts.len() + 1);
    assert_eq!(pts[0]["t"], 0.0);

    let o = ok(&["evaluate", s(&remission()), "--folds", "3", "--kernel", "linear"]);
    let cv: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cv["folds"].as_array().unwrap().len(), 3);
    let n: u64 = cv["folds"].as_array().unwrap().iter().map(|f| f["n_test"].as_u64().unwrap()).sum();
    assert_eq!(n, 42);
}

#[test]
fn tune_reports_every_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.csv");
    let o = ok(&[
        "tune",
        s(&remission()),
        "--kernel",
        "linear",
        "--eta-grid",
        "-2,0,2",
        "--folds",
        "3",
        "--table",
        s(&table),
    ]);
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = rep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let best = rep["best_eta"].as_f64().unwrap();
    assert!([-2.0, 0.0, 2.0].contains(&best));
    assert!((rep["best_kappa"].as_f64().unwrap() - best.exp()).abs() < 1e-12);
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 1 + 3 * 3);
}

#[test]
fn remission_tree_stays_small() {
    let d = dipole_tree::data::load_csv(remission(), &CsvSchema::default()).unwrap();
    for seed in 0..3 {
        let opts = pipeline::FitOptions { seed, ..Default::default() };
        let (_, rep) = pipeline::fit(&d, &opts).unwrap();
        assert!(rep.nodes_pruned <= 9, "seed {seed}: {} nodes", rep.nodes_pruned);
    }
}

#[test]
fn vanishing_kappa_gives_single_node_folds() {
    let d = dipole_tree::data::load_csv(remission(), &CsvSchema::default()).unwrap();
    let rep = pipeline::tune(&d, &[-40.0, -35.0], 3, &pipeline::FitOptions::default()).unwrap();
    let (a, b) = (&rep.rows[0].cv, &rep.rows[1].cv);
    assert!(a.mean_ci.is_none() && b.mean_ci.is_none());
    for (fa, fb) in a.folds.iter().zip(&b.folds) {
        assert_eq!(fa.nodes, Some(1));
        assert_eq!(fa.ibs, fb.ibs);
    }
    assert_eq!(rep.best_eta, -40.0);
}

#[test]
fn separable_training_data_ranks_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sep.csv");
    let mut text = String::from("time,status,x\n");
    for i in 0..40 {
        let t = i as f64 + if i >= 20 { 100.0 } else { 1.0 };
        text += &format!("{t},1,{i}\n");
    }
    std::fs::write(&data, text).unwrap();
    let model = dir.path().join("m.json");
    ok(&["fit", s(&data), "--kernel", "linear", "--out", s(&model)]);
    let o = ok(&["evaluate", s(&data), "--model", s(&model)]);
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["ci"], 1.0);
}
