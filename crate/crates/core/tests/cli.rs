use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

use gerne::dataset::{generate_synthetic, load_csv, SyntheticSpec};

fn gerne(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gerne"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn small_config() -> Value {
    json!({
        "dataset": {"synthetic": {
            "num_classes": 2, "num_attributes": 2, "dim": 6,
            "alpha_target": [[0.95, 0.05], [0.05, 0.95]],
            "n_per_class": 300, "core_separation": 2.0, "spurious_separation": 5.0,
            "noise_std": 1.0, "seed": 4,
            "n_val_per_class": 100, "n_test_per_class": 200}},
        "optimizer": {"learning_rate": 0.05},
        "batch_size_per_class": 16, "epochs": 4, "steps_per_epoch": 5,
        "c": 0.5, "beta": 1.0, "selection": "wga_val", "seed": 11
    })
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

#[test]
fn train_writes_reports_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.json", &small_config());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(gerne(&["train"], &cfg, &a).status.code(), Some(0));
    assert_eq!(gerne(&["train"], &cfg, &b).status.code(), Some(0));
    for file in ["report.json", "curves.csv", "model.json"] {
        let left = fs::read(a.join(file)).unwrap();
        assert_eq!(left, fs::read(b.join(file)).unwrap(), "{file} differs between runs");
    }
    let report: Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!(report.get("wall_clock_ms").is_none());
    let model: Value = serde_json::from_slice(&fs::read(a.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["encoding"], "f64-le-base64");
    let curves = fs::read_to_string(a.join("curves.csv")).unwrap();
    assert!(curves.starts_with("epoch,loss_b,loss_lb,loss_ext,"));
    assert_eq!(curves.lines().count(), 5);
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.json", &small_config());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(gerne(&["train"], &cfg, &a).status.success());
    assert!(gerne(&["train", "--seed", "12"], &cfg, &b).status.success());
    assert_ne!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
}

#[test]
fn infeasible_beta_exits_with_2() {
    let dir = TempDir::new().unwrap();
    let mut value = small_config();
    value["beta"] = json!(50.0);
    let cfg = write_config(dir.path(), "run.json", &value);
    let out = gerne(&["train"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = TempDir::new().unwrap();
    let mut value = small_config();
    value["c"] = json!(1.5);
    let cfg = write_config(dir.path(), "run.json", &value);
    assert_eq!(gerne(&["train"], &cfg, &dir.path().join("out")).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_3() {
    let dir = TempDir::new().unwrap();
    let mut value = small_config();
    value["optimizer"]["learning_rate"] = json!(1e308);
    let cfg = write_config(dir.path(), "run.json", &value);
    assert_eq!(gerne(&["train"], &cfg, &dir.path().join("out")).status.code(), Some(3));
    assert_eq!(gerne(&["grid"], &cfg, &dir.path().join("grid")).status.code(), Some(3));
}

#[test]
fn grid_reports_every_cell() {
    let dir = TempDir::new().unwrap();
    let mut value = small_config();
    value["c"] = json!([0.5, 1.0]);
    value["beta"] = json!([-1.0, 0.0, 0.5]);
    let cfg = write_config(dir.path(), "grid.json", &value);
    let out = dir.path().join("out");
    assert!(gerne(&["grid"], &cfg, &out).status.success());
    let grid: Value = serde_json::from_slice(&fs::read(out.join("grid.json")).unwrap()).unwrap();
    assert_eq!(grid["schema_version"], 1);
    assert_eq!(grid["cells"].as_array().unwrap().len(), 6);
    assert!(out.join("report.json").exists());
}

#[test]
fn generate_round_trips_through_csv() {
    let dir = TempDir::new().unwrap();
    let spec = SyntheticSpec::aligned(3, 0.1, 50, 7, 8);
    let cfg = write_config(dir.path(), "spec.json", &serde_json::to_value(&spec).unwrap());
    let out = dir.path().join("data");
    assert!(gerne(&["generate"], &cfg, &out).status.success());
    let text = fs::read_to_string(out.join("train.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "f0,f1,f2,f3,f4,f5,f6,label,attribute");
    let loaded = load_csv(out.join("train.csv"), true).unwrap();
    let direct = generate_synthetic(&spec).unwrap();
    assert_eq!(loaded.labels(), direct.labels());
    assert_eq!(loaded.true_attributes(), direct.true_attributes());
    assert_eq!(loaded.features(), direct.features());
    let min_label = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(7).unwrap().parse::<i64>().unwrap())
        .min()
        .unwrap();
    assert_eq!(min_label, 1);
}

#[test]
fn pseudo_writes_grouping_csv() {
    let dir = TempDir::new().unwrap();
    let mut value = small_config();
    value["t"] = json!([1e-3, 1e-2]);
    value["beta"] = json!("auto");
    value["beta_grid_points"] = json!(3);
    let cfg = write_config(dir.path(), "pseudo.json", &value);
    let out = dir.path().join("out");
    let run = gerne(&["pseudo"], &cfg, &out);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(out.join("pseudo.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sample_index,class,pseudo_attribute,confidence");
    assert_eq!(lines.count(), 600);
}

#[test]
fn verify_passes_and_writes_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "unused.json", &json!({}));
    let out = dir.path().join("out");
    let run = gerne(&["verify"], &cfg, &out);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    let report: Value = serde_json::from_slice(&fs::read(out.join("verification.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn variance_writes_rows() {
    let dir = TempDir::new().unwrap();
    let value = json!({
        "dataset": serde_json::to_value(SyntheticSpec {
            alpha_target: vec![vec![0.99, 0.01], vec![0.01, 0.99]],
            ..SyntheticSpec::aligned(2, 0.01, 500, 6, 3)
        }).unwrap(),
        "c": 0.5, "draws": 300, "seed": 2
    });
    let cfg = write_config(dir.path(), "variance.json", &value);
    let out = dir.path().join("out");
    let run = gerne(&["variance"], &cfg, &out);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out.join("variance.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 5);
    assert_eq!(fs::read_to_string(out.join("variance.csv")).unwrap().lines().count(), 6);
}

#[test]
fn out_must_be_a_directory() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.json", &small_config());
    let file = dir.path().join("file");
    fs::write(&file, "x").unwrap();
    assert_eq!(gerne(&["train"], &cfg, &file).status.code(), Some(1));
}
