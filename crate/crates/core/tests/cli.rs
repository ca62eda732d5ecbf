//! The `driftct` binary end to end: file formats, run records and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use driftct::data::read_volume;
use driftct::metrics::PSNR_CAP_DB;

fn driftct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftct"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = driftct(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = driftct(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

const SMALL: &str = r#"
version = 1

[train]
max_epochs = 1
"#;

#[test]
fn phantom_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = ok(&["phantom", "--out", s(&a), "--count", "3"]);
    let second = ok(&["phantom", "--out", s(&b), "--count", "3"]);
    let digest = |t: &str| t.rsplit("sha256 ").next().unwrap().trim_end_matches([')', '\n']).to_string();
    assert_eq!(digest(&first), digest(&second));
    assert_eq!(digest(&first).len(), 64);
    for f in files_with_ext(&a, "vraw") {
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.join(f.file_name().unwrap())).unwrap());
    }
    assert_eq!(files_with_ext(&a, "vhdr").len(), 6);

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "phantom");
    assert_eq!(run["seeds"]["phantom"], 0);
    assert!(run["version"].as_str().is_some_and(|v| !v.is_empty()));
    assert!(a.join("config.resolved.toml").exists());
}

#[test]
fn zero_phantoms_give_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["phantom", "--out", s(dir.path()), "--count", "0"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["count"], 0);
    assert_eq!(m["subjects"].as_array().unwrap().len(), 0);
}

#[test]
fn prep_is_idempotent_and_reports_missing_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, p1, p2) = (dir.path().join("raw"), dir.path().join("p1"), dir.path().join("p2"));
    ok(&["phantom", "--out", s(&raw), "--count", "2"]);
    ok(&["prep", "--in", s(&raw), "--out", s(&p1)]);
    ok(&["prep", "--in", s(&p1), "--out", s(&p2)]);
    let once = files_with_ext(&p1, "vraw");
    assert_eq!(once.len(), 4);
    for f in &once {
        assert_eq!(fs::read(f).unwrap(), fs::read(p2.join(f.file_name().unwrap())).unwrap());
        let v = read_volume(&f.with_extension("")).unwrap();
        assert_eq!(&v.shape()[1..], &[64, 64]);
        assert!(v.values().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    fs::remove_file(raw.join("subj_001_target.vhdr")).unwrap();
    let err = fails_with(&["prep", "--in", s(&raw), "--out", s(&dir.path().join("p3"))], 1);
    assert!(err.contains("subj_001"), "{err}");
}

#[test]
fn train_infer_eval_uncertainty_bench() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let (raw, prep, run, pred) = (root.join("raw"), root.join("prep"), root.join("run"), root.join("pred"));
    ok(&["phantom", "--out", s(&raw), "--count", "5"]);
    ok(&["prep", "--in", s(&raw), "--out", s(&prep)]);
    ok(&["train", "--data", s(&prep), "--config", s(&cfg), "--out", s(&run)]);
    for f in ["best.ckpt", "final.ckpt", "train_log.csv", "split.json", "run.json", "config.resolved.toml"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,drift_loss,l1_loss,total,tau_used,grad_norm,val_l1,wall_seconds"));
    assert_eq!(lines.count(), 1);
    let resolved = fs::read_to_string(run.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("max_epochs = 1"));

    let ckpt = run.join("best.ckpt");
    ok(&["infer", "--ckpt", s(&ckpt), "--in", s(&prep), "--out", s(&pred), "--seed", "3"]);
    let p = read_volume(&pred.join("subj_000_pred")).unwrap();
    assert_eq!(p.shape(), [1, 64, 64]);
    assert!(pred.join("subj_000_pred.pgm").exists());

    let csv_path = root.join("metrics.csv");
    ok(&["eval", "--pred", s(&pred), "--ref", s(&prep), "--out", s(&csv_path)]);
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("subj_004,")));

    // Scoring the targets against themselves.
    let self_csv = root.join("self.csv");
    ok(&["eval", "--pred", s(&prep), "--ref", s(&prep), "--out", s(&self_csv)]);
    let text = fs::read_to_string(&self_csv).unwrap();
    let header: Vec<&str> = text.lines().find(|l| !l.starts_with('#')).unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .filter(|l| l.starts_with("subj_"))
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert_eq!(r[col("ssim")].parse::<f64>().unwrap(), 1.0);
        assert_eq!(r[col("rmse")].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[col("psnr")].parse::<f64>().unwrap(), PSNR_CAP_DB);
    }

    let unc = root.join("unc");
    ok(&["uncertainty", "--ckpt", s(&ckpt), "--in", s(&prep), "--out", s(&unc), "--K", "4", "--no-noise"]);
    let map = read_volume(&unc.join("subj_002_unc")).unwrap();
    assert!(map.values().iter().all(|v| *v == 0.0));
    let unc2 = root.join("unc2");
    ok(&["uncertainty", "--ckpt", s(&ckpt), "--in", s(&prep), "--out", s(&unc2), "--K", "4"]);
    let map = read_volume(&unc2.join("subj_002_unc")).unwrap();
    assert!(map.values().iter().all(|v| *v >= 0.0) && map.values().iter().any(|v| *v > 0.0));

    let bench = ok(&["bench", "--ckpt", s(&ckpt), "--reps", "3"]);
    assert!(bench.starts_with("rep,batch,height,width,ms\n"));
    assert_eq!(bench.lines().filter(|l| !l.starts_with('#')).count(), 4);

    fs::remove_file(pred.join("subj_001_pred.vhdr")).unwrap();
    fs::remove_file(prep.join("subj_003_target.vhdr")).unwrap();
    let err = fails_with(&["eval", "--pred", s(&pred), "--ref", s(&prep), "--out", s(&csv_path)], 1);
    assert!(err.contains("subj_003"), "{err}");
}

#[test]
fn driftcheck_reports_and_fails_on_tolerance() {
    let out = ok(&["driftcheck", "--instances", "10", "--sizes", "1,8,64"]);
    assert!(out.starts_with("10 instances: max relative error"), "{out}");
    let err = fails_with(&["driftcheck", "--instances", "10", "--sizes", "64", "--tol", "1e-30"], 2);
    assert!(err.contains("exceeds"), "{err}");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "version = 1\n[train]\nlearning_rate = 0.1\n").unwrap();
    let err = fails_with(&["phantom", "--config", s(&bad), "--out", s(dir.path()), "--count", "1"], 1);
    assert!(err.contains("learning_rate"), "{err}");
    fs::write(&bad, "version = 1\n[train]\nsplit = [0.5, 0.5, 0.5]\n").unwrap();
    fails_with(&["phantom", "--config", s(&bad), "--out", s(dir.path()), "--count", "1"], 1);
    fails_with(&["train", "--data", s(&dir.path().join("nowhere")), "--out", s(dir.path())], 1);
}
