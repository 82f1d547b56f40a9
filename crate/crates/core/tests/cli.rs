//! End-to-end runs of the `afnet` binary on a small synthetic scene.

use std::path::Path;
use std::process::{Command, Output};

use afnet::bench::SweepPlan;
use afnet::hsio::mat::{write_mat, MatArray};
use afnet::hsio::{datasets, load_cube, load_ground_truth};
use afnet::metrics::EvaluationReport;
use afnet::net::{AfNetConfig, Checkpoint, ModelKind};
use afnet::pipeline::{files, RunConfig, RunManifest};
use afnet::synthetic::field_scene;
use afnet::trainer::TrainingHistory;

const SIDE: usize = 20;
const BANDS: usize = 10;

fn afnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afnet"))
        .args(args)
        .env_remove(datasets::DATA_DIR_ENV)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the scene as MATLAB files and converts them with the CLI.
fn convert_scene(dir: &Path) {
    let (cube, gt) = field_scene(SIDE, SIDE, BANDS, 3, 9).unwrap();
    let mut col_major = vec![0.0; cube.data.len()];
    for r in 0..SIDE {
        for c in 0..SIDE {
            for b in 0..BANDS {
                col_major[r + SIDE * (c + SIDE * b)] = cube.get(r, c, b);
            }
        }
    }
    let mut labels = vec![0.0; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            labels[r + SIDE * c] = gt.get(r, c) as f64;
        }
    }
    let cube_mat = dir.join("fields.mat");
    let gt_mat = dir.join("fields_gt.mat");
    std::fs::write(&cube_mat, write_mat(&[MatArray { name: "fields".into(), dims: vec![SIDE, SIDE, BANDS], data: col_major }])).unwrap();
    std::fs::write(&gt_mat, write_mat(&[MatArray { name: "fields_gt".into(), dims: vec![SIDE, SIDE], data: labels }])).unwrap();

    let (cube_out, gt_out) = datasets::container_paths(dir, "fields");
    let o = afnet(&["convert", "--input", s(&cube_mat), "--output", s(&cube_out), "--kind", "cube", "--remove-bands", "10", "--name", "fields"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = afnet(&["convert", "--input", s(&gt_mat), "--output", s(&gt_out), "--kind", "labels"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let back = load_cube(&cube_out).unwrap();
    assert_eq!((back.height, back.width, back.bands), (SIDE, SIDE, BANDS - 1));
    assert!((back.get(3, 4, 2) - cube.get(3, 4, 2)).abs() < 1e-6);
    assert_eq!(load_ground_truth(&gt_out).unwrap().labels, gt.labels);
}

fn run_config(epochs: usize) -> RunConfig {
    let mut cfg = RunConfig {
        dataset: "fields".into(),
        patch_size: 5,
        components: 3,
        network: Some(AfNetConfig::tiny(5, 3, 3, 2, 3)),
        ..RunConfig::default()
    };
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 32;
    cfg.train.seed = 3;
    cfg
}

fn write_json(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

#[test]
fn convert_train_evaluate_resume() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    convert_scene(root);
    let config = root.join("run.json");
    write_json(&config, &run_config(4));

    let full = root.join("full");
    let o = afnet(&["train", "--config", s(&config), "--data-dir", s(root), "--out", s(&full)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("OA (%)"));
    for f in [Checkpoint::FILE, Checkpoint::PARAMS_FILE, files::HISTORY, files::SPLIT, files::REPORT, files::REPORT_TEXT, files::CONFIG, files::MANIFEST, "map.png", "gt.png"] {
        assert!(full.join(f).exists(), "missing {f}");
    }
    let report = EvaluationReport::load(&full.join(files::REPORT)).unwrap();
    let manifest = RunManifest::load(&full.join(files::MANIFEST)).unwrap();
    assert_eq!(manifest.inputs.len(), 4, "headers and payloads");
    assert_eq!(manifest.command[1], "train");

    // evaluation from the checkpoint reproduces the saved metrics
    let o = afnet(&["evaluate", "--run", s(&full), "--data-dir", s(root), "--scale", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let again = EvaluationReport::load(&full.join("eval").join(files::REPORT)).unwrap();
    assert_eq!((again.oa, again.aa, again.kappa), (report.oa, report.aa, report.kappa));
    assert_eq!(again.confusion, report.confusion);
    let map = image::open(full.join("eval").join("map.png")).unwrap();
    assert_eq!((map.width(), map.height()), (2 * SIDE as u32, 2 * SIDE as u32));

    // two epochs, then two more on resume, equal four straight epochs
    let split = root.join("split");
    write_json(&config, &run_config(2));
    let o = afnet(&["train", "--config", s(&config), "--data-dir", s(root), "--out", s(&split)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = afnet(&["train", "--data-dir", s(root), "--out", s(&split), "--resume", "--epochs", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resumed = EvaluationReport::load(&split.join(files::REPORT)).unwrap();
    assert_eq!((resumed.oa, resumed.kappa), (report.oa, report.kappa));
    assert_eq!(resumed.confusion, report.confusion);
    let h1 = TrainingHistory::load(&full.join(files::HISTORY)).unwrap();
    let h2 = TrainingHistory::load(&split.join(files::HISTORY)).unwrap();
    assert_eq!(h1.train_loss, h2.train_loss);
    assert_eq!(
        std::fs::read(full.join(Checkpoint::PARAMS_FILE)).unwrap(),
        std::fs::read(split.join(Checkpoint::PARAMS_FILE)).unwrap()
    );
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    convert_scene(root);
    let mut plan = SweepPlan::new(vec!["fields".into()], ModelKind::Inception2d);
    plan.fractions = vec![10, 15];
    plan.repeats = 1;
    plan.components = 3;
    plan.train.epochs = 1;
    plan.train.batch_size = 32;
    plan.network = Some(AfNetConfig::tiny(9, 3, 3, 1, 2));
    let plan_path = root.join("plan.json");
    write_json(&plan_path, &plan);
    let results = root.join("results");
    let o = afnet(&["sweep", "--plan", s(&plan_path), "--axis", "fraction", "--data-dir", s(root), "--out", s(&results)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for v in [10, 15] {
        assert!(results.join(format!("fields/inception2d/fraction={v}/run0")).join(files::REPORT).exists());
    }

    let o = afnet(&["report", "--results", s(&results)]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("fields") && text.contains("10%") && text.contains("15%"), "{text}");
    let o = afnet(&["report", "--results", s(&results), "--json"]);
    let tables: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(tables.as_array().unwrap().len(), 1);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(afnet(&[]).status.code(), Some(2));
    assert_eq!(afnet(&["train", "--out", s(root), "--patch-size", "many"]).status.code(), Some(2));
    // no dataset root
    assert_eq!(afnet(&["train", "--out", s(&root.join("o"))]).status.code(), Some(2));
    // missing containers
    assert_eq!(afnet(&["train", "--data-dir", s(root), "--out", s(&root.join("o"))]).status.code(), Some(2));
    let bogus = root.join("x.mat");
    std::fs::write(&bogus, b"not a mat file").unwrap();
    assert_eq!(afnet(&["convert", "--input", s(&bogus), "--output", s(&root.join("x.hsij"))]).status.code(), Some(2));
    assert_eq!(afnet(&["report", "--results", s(root)]).status.code(), Some(2));
    assert_eq!(afnet(&["--version"]).status.code(), Some(0));
}
