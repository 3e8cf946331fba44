use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

const SMALL: [&str; 10] = [
    "--set",
    "dataset.n=60",
    "--set",
    "clustering.k=2",
    "--set",
    "clustering.balance_floor=5",
    "--set",
    "clustering.l_min=5",
    "--set",
    "eval.n_repeats=2",
];

fn mvlr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvlr"))
        .args(args)
        .env("MVLR_THREADS", "1")
        .output()
        .expect("spawn mvlr")
}

fn ok(args: &[&str]) -> Output {
    let out = mvlr(args);
    assert!(
        out.status.success(),
        "mvlr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn tiny_dataset_is_quick() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    let t = Instant::now();
    ok(&["dataset", "--out", s(&out), "--set", "dataset.n=10", "--seed", "3"]);
    assert!(t.elapsed() < Duration::from_secs(5), "took {:?}", t.elapsed());
    for f in ["manifest.json", "records.bin", "config.toml"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn pipeline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let ds = tmp.path().join(format!("ds{tag}"));
        let model = tmp.path().join(format!("model{tag}"));
        let rep = tmp.path().join(format!("rep{tag}"));
        ok(&with_small(&["dataset", "--out", s(&ds), "--seed", "5"]));
        ok(&with_small(&["train", "--dataset", s(&ds), "--out", s(&model)]));
        let model_file = model.join("model.json");
        ok(&with_small(&["eval", "--model", s(&model_file), "--out", s(&rep)]));
        (ds, model, rep)
    };
    let (d1, m1, r1) = run("a");
    let (d2, m2, r2) = run("b");
    assert_eq!(read(&d1.join("manifest.json")), read(&d2.join("manifest.json")));
    assert_eq!(read(&d1.join("records.bin")), read(&d2.join("records.bin")));
    assert_eq!(read(&m1.join("model.json")), read(&m2.join("model.json")));
    assert_eq!(read(&r1.join("report.json")), read(&r2.join("report.json")));
    assert_eq!(read(&r1.join("trajectory.csv")), read(&r2.join("trajectory.csv")));
}

#[test]
fn different_seed_changes_records() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["dataset", "--out", s(&a), "--set", "dataset.n=10", "--seed", "1"]);
    ok(&["dataset", "--out", s(&b), "--set", "dataset.n=10", "--seed", "2"]);
    assert_ne!(read(&a.join("records.bin")), read(&b.join("records.bin")));
}

#[test]
fn empty_sweep_grid_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mvlr(&[
        "sweep",
        "--out",
        s(&tmp.path().join("sw")),
        "--set",
        "sweep.l_values=[]",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_flag_and_key_exit_2() {
    let out = mvlr(&["dataset", "--out", "x", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = mvlr(&["dataset", "--out", s(&tmp.path().join("x")), "--set", "dataset.bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[dataset]\nn = 10\nsurprise = true\n").unwrap();
    let out = mvlr(&["--config", s(&cfg), "dataset", "--out", s(&tmp.path().join("y"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mvlr(&[
        "train",
        "--dataset",
        s(&tmp.path().join("nope")),
        "--out",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn model_from_other_arrays_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, model) = (tmp.path().join("ds"), tmp.path().join("m"));
    ok(&with_small(&["dataset", "--out", s(&ds)]));
    ok(&with_small(&["train", "--dataset", s(&ds), "--out", s(&model)]));
    let (model_file, rep) = (model.join("model.json"), tmp.path().join("r"));
    let mut args = with_small(&["eval", "--model", s(&model_file), "--out", s(&rep)]);
    args.extend(["--set", "arrays.rx.rows=4"]);
    let out = mvlr(&args);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn position_baseline_fills_its_column() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, model, rep) = (tmp.path().join("ds"), tmp.path().join("m"), tmp.path().join("r"));
    ok(&with_small(&["dataset", "--out", s(&ds)]));
    ok(&with_small(&["train", "--dataset", s(&ds), "--out", s(&model)]));
    let model_file = model.join("model.json");
    let mut args = with_small(&["eval", "--model", s(&model_file), "--out", s(&rep)]);
    args.extend(["--baseline", "position-aware", "--dataset", s(&ds)]);
    ok(&args);
    let text = String::from_utf8(read(&rep.join("trajectory.csv"))).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "mse_position").unwrap();
    let mut rows = 0;
    for l in lines {
        let v: f64 = l.split(',').nth(col).unwrap().parse().unwrap();
        assert!(v.is_finite() && v > 0.0);
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn baseline_requires_dataset() {
    let out = mvlr(&[
        "eval",
        "--model",
        "m.json",
        "--out",
        "r",
        "--baseline",
        "position-aware",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&with_small(&["dataset", "--out", s(&a), "--threads", "1"]));
    ok(&with_small(&["dataset", "--out", s(&b), "--threads", "3"]));
    assert_eq!(read(&a.join("records.bin")), read(&b.join("records.bin")));
}

#[test]
fn sweep_writes_medians() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    let mut args = with_small(&["sweep", "--out", s(&out)]);
    args.extend(["--set", "sweep.l_values=[2, 20]", "--set", "sweep.n_test=10"]);
    ok(&args);
    let summary: serde_json::Value = serde_json::from_slice(&read(&out.join("summary.json"))).unwrap();
    let text = summary.to_string();
    assert!(text.contains("median_gain_db"), "{text}");
    assert!(out.join("sweep.csv").is_file());
}
