use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

fn vlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlm-par")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Writes the desk config with `edit` applied and generates its training set.
fn desk_run(dir: &Path, spec: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let o = vlm(&["gen-data", "--spec", s(&fixture(spec)), "--out", s(&dir.join("train"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(fixture("configs/desk.json")).unwrap()).unwrap();
    edit(&mut cfg);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Every file under `dir` as (relative path, bytes), sorted.
fn read_dir_sorted(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

#[test]
fn gen_data_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fixture("specs/overfit8.json");
    for out in ["a", "b"] {
        assert_eq!(code(&vlm(&["gen-data", "--spec", s(&spec), "--out", s(&dir.path().join(out))])), 0);
    }
    let a = dir.path().join("a");
    assert!(a.join("images").is_dir() && a.join("annotations.jsonl").is_file() && a.join("prompts.json").is_file());
    assert_eq!(std::fs::read_dir(a.join("images")).unwrap().count(), 8);
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&dir.path().join("b")));
}

#[test]
fn gen_data_rejects_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec: Value = serde_json::from_str(&std::fs::read_to_string(fixture("specs/overfit8.json")).unwrap()).unwrap();
    spec["attributes"][1]["region"]["top"] = 8.into();
    let path = dir.path().join("spec.json");
    std::fs::write(&path, spec.to_string()).unwrap();
    let o = vlm(&["gen-data", "--spec", s(&path), "--out", s(&dir.path().join("out"))]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("region overlap"));
}

#[test]
fn train_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_run(dir.path(), "specs/overfit8.json", |c| {
        c["train"]["epochs"] = 200.into();
        c["train"]["batch_size"] = 8.into();
    });
    assert_eq!(code(&vlm(&["train", "--config", s(&cfg)])), 0);
    let run = dir.path().join("run");
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 201);
    assert_eq!(history.lines().next().unwrap(), "epoch,loss,mA,F1");

    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["ablation"], "full");
    assert_eq!(manifest["encoder_checksum_before"], manifest["encoder_checksum_after"]);
    for key in ["optimizer", "learning_rate", "batch_size", "adam_beta1", "adam_eps"] {
        assert!(!manifest["config"]["train"][key].is_null(), "{key}");
    }
    for key in ["lambda_ce", "lambda_focal", "focal_gamma", "smoothing"] {
        assert!(!manifest["config"]["loss"][key].is_null(), "{key}");
    }
    assert_eq!(manifest["resolved_defaults"]["pooling"], "mean_over_patches");

    let weights = run.join("weights.vlmw");
    let data = dir.path().join("train");
    let mut reports = Vec::new();
    for name in ["r1.json", "r2.json"] {
        let report = dir.path().join(name);
        assert_eq!(code(&vlm(&["eval", "--config", s(&cfg), "--weights", s(&weights), "--data", s(&data), "--report", s(&report)])), 0);
        reports.push((std::fs::read(&report).unwrap(), std::fs::read(report.with_extension("csv")).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
    let r: Value = serde_json::from_slice(&reports[0].0).unwrap();
    assert_eq!(r["mean_accuracy"], 1.0);
    assert_eq!(r["mean_f1"], 1.0);
    let csv = String::from_utf8(reports[0].1.clone()).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "attribute,recall_pos,recall_neg,precision,f1,mean_accuracy");
    assert_eq!(csv.lines().last().unwrap(), "ALL,,,,1,1");
}

#[test]
fn ablated_training_omits_fusion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_run(dir.path(), "specs/overfit8.json", |c| c["train"]["epochs"] = 2.into());
    assert_eq!(code(&vlm(&["train", "--config", s(&cfg), "--ablation", "no_cross_attention"])), 0);
    let run = dir.path().join("run");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["ablation"], "no_cross_attention");
    let c = vlm_par::io::TensorContainer::load(run.join("weights.vlmw")).unwrap();
    assert!(c.names().all(|n| n.starts_with("head.")));

    let report = dir.path().join("eval.json");
    let o = vlm(&["eval", "--config", s(&cfg), "--weights", s(&run.join("weights.vlmw")), "--data", s(&dir.path().join("train")), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_invocations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&vlm(&["frobnicate"])), 1);
    assert_eq!(code(&vlm(&["train"])), 1);
    assert_eq!(code(&vlm(&["train", "--config", s(&fixture("configs/desk.json")), "--ablation", "sometimes"])), 1);
    assert_eq!(code(&vlm(&["--help"])), 0);

    // Dataset directory "train" does not exist next to the fixture config.
    let o = vlm(&["train", "--config", s(&fixture("configs/desk.json"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let typo = dir.path().join("typo.json");
    std::fs::write(&typo, r#"{"train": {"learning_rat": 0.1}}"#).unwrap();
    assert_eq!(code(&vlm(&["train", "--config", s(&typo)])), 1);
}

#[test]
fn incompatible_weights_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_run(dir.path(), "specs/overfit8.json", |c| c["train"]["epochs"] = 1.into());
    assert_eq!(code(&vlm(&["train", "--config", s(&cfg)])), 0);
    let narrow = desk_run(&dir.path().join("narrow"), "specs/overfit8.json", |c| {
        c["model"]["encoder"]["d_model"] = 32.into();
    });
    let o = vlm(&[
        "eval", "--config", s(&narrow),
        "--weights", s(&dir.path().join("run/weights.vlmw")),
        "--data", s(&dir.path().join("train")),
        "--report", s(&dir.path().join("r.json")),
    ]);
    assert_ne!(code(&o), 0);
}

#[test]
fn gradcheck_exit_codes() {
    let tiny = fixture("configs/tiny.json");
    let o = vlm(&["gradcheck", "--config", s(&tiny)]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 16);
    assert_eq!(code(&vlm(&["gradcheck", "--config", s(&fixture("configs/desk.json"))])), 0);
    assert_ne!(code(&vlm(&["gradcheck", "--config", s(&tiny), "--tolerance", "1e-12"])), 0);
    assert_ne!(code(&vlm(&["gradcheck", "--config", s(&tiny), "--corrupt-gradient"])), 0);
}

#[test]
fn ablate_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_run(dir.path(), "specs/overfit8.json", |c| c["train"]["epochs"] = 3.into());
    let out = dir.path().join("ablation");
    assert_eq!(code(&vlm(&["ablate", "--config", s(&cfg), "--data", s(&dir.path().join("train")), "--report", s(&out)])), 0);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], ["attribute", "acc_without_cross_attention", "acc_with_cross_attention", "delta"]);
    assert_eq!(rows[3][0], "AVERAGE");
    for r in &rows[1..] {
        let v: Vec<f64> = r[1..].iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[2] - (v[1] - v[0])).abs() <= 1e-12);
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(manifest["report"]["seed"], manifest["config"]["seed"]);
}

#[test]
fn zeroshot_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_run(dir.path(), "specs/overfit8.json", |_| {});
    // Duplicate sample 0 under a second id.
    let train = dir.path().join("train");
    std::fs::copy(train.join("images/000000.vlme"), train.join("images/copy.vlme")).unwrap();
    let first = std::fs::read_to_string(train.join("annotations.jsonl")).unwrap().lines().next().unwrap().to_string();
    let copy = first.replace("\"000000\"", "\"copy\"").replace("images/000000.vlme", "images/copy.vlme");
    let mut ann = std::fs::read_to_string(train.join("annotations.jsonl")).unwrap();
    ann.push_str(&copy);
    ann.push('\n');
    std::fs::write(train.join("annotations.jsonl"), ann).unwrap();

    let report = dir.path().join("zs.csv");
    assert_eq!(code(&vlm(&["zeroshot", "--config", s(&cfg), "--data", s(&train), "--report", s(&report)])), 0);
    let csv = std::fs::read_to_string(&report).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 9 * 2);
    assert!(rows.iter().all(|r| (-1.0..=1.0).contains(&r[2].parse::<f64>().unwrap())));
    let score = |id: &str| rows.iter().filter(|r| r[0] == id).map(|r| (r[1].clone(), r[2].clone())).collect::<Vec<_>>();
    assert_eq!(score("000000"), score("copy"));
}

#[test]
fn zeroshot_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec: Value = serde_json::from_str(&std::fs::read_to_string(fixture("specs/overfit8.json")).unwrap()).unwrap();
    spec["num_samples"] = 1.into();
    spec["attributes"].as_array_mut().unwrap().truncate(1);
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let cfg = desk_run(dir.path(), "specs/overfit8.json", |_| {});
    let data = dir.path().join("one");
    assert_eq!(code(&vlm(&["gen-data", "--spec", s(&spec_path), "--out", s(&data)])), 0);
    let report = dir.path().join("zs.csv");
    let o = vlm(&["zeroshot", "--config", s(&cfg), "--data", s(&data), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 2);
}
