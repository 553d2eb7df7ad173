mod common;

use common::{files, make_set, tiny_config};
use deca::checkpoint::Checkpoint;
use deca::data::Prepared;
use deca::dataset::{read_manifest, Dataset};
use deca::error::CliError;
use deca::eval::{evaluate, evaluate_dataset, parse_metrics, read_report_csv, write_eval};
use deca::export::{export_entities, joint_names};
use deca::train::{initialize, split_indices, train, train_prepared};
use deca::transfer::transfer;
use deca_core::metrics::MetricTag;
use deca_core::synth::ViewTag;
use serde_json::json;
use tempfile::TempDir;

struct World {
    dir: TempDir,
}

impl World {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        make_set(&dir.path().join("train"), 24, 0, 3);
        make_set(&dir.path().join("test"), 10, 5000, 3);
        World { dir }
    }

    fn path(&self, p: &str) -> std::path::PathBuf {
        self.dir.path().join(p)
    }

    fn train(&self, view: ViewTag, out: &str) -> Checkpoint {
        train(&tiny_config(&self.path("train"), view), &self.path(out)).unwrap()
    }
}

fn all_metrics() -> Vec<MetricTag> {
    parse_metrics("map,mpjpe,mpjpe-procrustes").unwrap()
}

#[test]
fn dataset_counts_and_regeneration() {
    let dir = TempDir::new().unwrap();
    make_set(&dir.path().join("a"), 5, 100, 9);
    make_set(&dir.path().join("b"), 5, 100, 9);
    let (a, b) = (files(&dir.path().join("a")), files(&dir.path().join("b")));
    assert_eq!(a, b);
    let m = read_manifest(&dir.path().join("a")).unwrap();
    assert_eq!(m.frame_count, 5);
    assert_eq!(m.samples.len(), 10);
    assert_eq!(m.frame_ids, (100..105).collect::<Vec<_>>());
    for view in [ViewTag::Front, ViewTag::Top] {
        let ds = Dataset::load(&dir.path().join("a"), view, false).unwrap();
        assert_eq!(ds.frame_ids(), m.frame_ids);
    }
    make_set(&dir.path().join("c"), 5, 100, 10);
    assert_ne!(a, files(&dir.path().join("c")));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let w = World::new();
    let ckpt = w.train(ViewTag::Front, "run");
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.config, ckpt.config);
    assert_eq!(back.header().tensors.len(), ckpt.header().tensors.len());

    let loaded = Checkpoint::load(&w.path("run/last.ckpt")).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), bytes);

    let ds = Dataset::load(&w.path("test"), ViewTag::Front, false).unwrap();
    let data = Prepared::from_dataset(&ds, &ckpt.config.model).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let x = data.input_batch(&idx).unwrap();
    let a = ckpt.model.predict(x.clone()).unwrap();
    let b = loaded.model.predict(x).unwrap();
    assert_eq!(a.y3d, b.y3d);
    assert_eq!(a.entities, b.entities);

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn zero_epochs_is_the_initialization() {
    let w = World::new();
    let mut cfg = tiny_config(&w.path("train"), ViewTag::Front);
    cfg.train.epochs = 0;
    let ds = Dataset::load(&w.path("train"), ViewTag::Front, false).unwrap();
    let data = Prepared::from_dataset(&ds, &cfg.model).unwrap();
    let trained = train_prepared(&cfg, &data, &mut |_| Ok(()), &mut |_| Ok(())).unwrap();
    let (tr, va) = split_indices(data.len(), cfg.data.validation_fraction, cfg.train.seed);
    let init = initialize(&cfg, &data, &tr, &va).unwrap();
    assert_eq!(trained.epoch, 0);
    assert_eq!(trained.to_bytes().unwrap(), init.to_bytes().unwrap());
}

#[test]
fn split_is_seeded_and_disjoint() {
    let (tr, va) = split_indices(50, 0.1, 4);
    assert_eq!(va.len(), 5);
    assert_eq!(tr.len() + va.len(), 50);
    assert!(tr.iter().all(|i| !va.contains(i)));
    assert_eq!(split_indices(50, 0.1, 4), (tr, va.clone()));
    assert_ne!(split_indices(50, 0.1, 5).1, va);
    assert_eq!(split_indices(1, 0.5, 0).0.len(), 1);
}

#[test]
fn training_is_reproducible() {
    let w = World::new();
    let a = w.train(ViewTag::Front, "a");
    let b = w.train(ViewTag::Front, "b");
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    let log = std::fs::read_to_string(w.path("a/train_log.jsonl")).unwrap();
    assert_eq!(log, std::fs::read_to_string(w.path("b/train_log.jsonl")).unwrap());
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["event"], "start");
    assert_eq!(lines.iter().filter(|l| l["event"] == "epoch").count(), 2);
    assert!(lines[1]["val"]["map_mean"].is_number());
    let cfg = std::fs::read_to_string(w.path("a/config.toml")).unwrap();
    assert_eq!(deca::config::ExperimentConfig::from_toml(&cfg).unwrap(), a.config);
    assert_eq!(a.train_frame_ids.len() + a.val_frame_ids.len(), 24);
}

#[test]
fn evaluation_reports_recompose() {
    let w = World::new();
    let mut ckpt = w.train(ViewTag::Front, "run");
    let out = evaluate(&ckpt, &w.path("test"), None, &all_metrics()).unwrap();
    assert_eq!(out.frame_ids, (5000..5010).collect::<Vec<_>>());
    for r in out.reports.iter().chain(&out.mean_pose_baseline) {
        assert_eq!(r.per_joint.len(), 15);
        let mean = r.per_joint.iter().sum::<f64>() / 15.0;
        assert!((r.mean - mean).abs() < 1e-9);
    }
    write_eval(&w.path("ev"), &ckpt.config, &out, &joint_names(&ckpt.config)).unwrap();
    let table = read_report_csv(&w.path("ev/report.csv")).unwrap();
    let map = &table["map_0.1m"];
    let cols: Vec<f64> = (0..15).map(|j| map[&format!("joint:{}", joint_names(&ckpt.config)[j])]).collect();
    assert!((map["mean"] - cols.iter().sum::<f64>() / 15.0).abs() < 1e-9);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(w.path("ev/report.json")).unwrap()).unwrap();
    assert!(json["mean_convention"].is_string());
    assert_eq!(json["config"]["model"]["image_size"], json!(common::SIDE));

    ckpt.config.eval.radius = 10.0;
    let wide = evaluate(&ckpt, &w.path("test"), None, &[MetricTag::Map]).unwrap();
    assert_eq!(wide.reports[0].mean, 100.0);
}

#[test]
fn eval_view_defaults_to_training_view() {
    let w = World::new();
    let ckpt = w.train(ViewTag::Top, "run");
    let same = evaluate(&ckpt, &w.path("test"), None, &all_metrics()).unwrap();
    assert_eq!(same.test_view, ViewTag::Top);
    let other = evaluate(&ckpt, &w.path("test"), Some(ViewTag::Front), &all_metrics()).unwrap();
    assert_eq!(other.test_view, ViewTag::Front);
    assert_eq!(same.frame_ids, other.frame_ids);
}

#[test]
fn incompatible_dataset_lists_diffs() {
    let w = World::new();
    let ckpt = w.train(ViewTag::Front, "run");
    let dir = w.path("big");
    let mut c = deca::config::ExperimentConfig::default().synth;
    c.frames = 2;
    c.image_size = 40;
    deca::dataset::generate_dataset(&c, &dir).unwrap();
    match evaluate(&ckpt, &dir, None, &all_metrics()) {
        Err(CliError::Incompatible { diffs }) => assert!(diffs.iter().any(|d| d.contains("image"))),
        other => panic!("expected incompatibility, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn export_is_deterministic() {
    let w = World::new();
    let ckpt = w.train(ViewTag::Front, "run");
    let a = export_entities(&ckpt, &w.path("test"), None, &w.path("a.csv")).unwrap();
    export_entities(&ckpt, &w.path("test"), None, &w.path("b.csv")).unwrap();
    let text = std::fs::read_to_string(w.path("a.csv")).unwrap();
    assert_eq!(text, std::fs::read_to_string(w.path("b.csv")).unwrap());
    assert_eq!(text.lines().count(), 1 + 10 * 15);
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 3 + 16);
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 19));
    assert_eq!((a.frames, a.joints, a.entity_dim), (10, 15, 16));
    assert!((-1.0..=1.0).contains(&a.silhouette));
    let side: serde_json::Value = serde_json::from_slice(&std::fs::read(w.path("a.json")).unwrap()).unwrap();
    assert_eq!(side["silhouette"], json!(a.silhouette));
}

#[test]
fn transfer_protocol() {
    let w = World::new();
    let front = w.train(ViewTag::Front, "f");
    let top = w.train(ViewTag::Top, "t");
    let m = all_metrics();
    let test = w.path("test");
    let a = transfer([&front, &top], &test, &test, &m).unwrap();
    let b = transfer([&top, &front], &test, &test, &m).unwrap();
    assert_eq!(serde_json::to_value(&a.table).unwrap(), serde_json::to_value(&b.table).unwrap());
    assert_eq!(a.table.cells.len(), 4);
    assert_eq!(a.audit.len(), 4);
    assert!(a.audit.iter().all(|e| e.disjoint));

    for (ckpt, view) in [(&front, ViewTag::Front), (&top, ViewTag::Top)] {
        let alone = evaluate(ckpt, &test, None, &m).unwrap();
        let cell = a.table.cell(view, view).unwrap();
        assert_eq!(
            serde_json::to_value(&cell.reports).unwrap(),
            serde_json::to_value(&alone.reports).unwrap()
        );
    }

    match transfer([&front, &top], &w.path("train"), &test, &m) {
        Err(CliError::Protocol(msg)) => assert!(msg.contains("train") || msg.contains("validation")),
        other => panic!("expected protocol violation, got {:?}", other.map(|_| ())),
    }
    assert!(matches!(transfer([&front, &front], &test, &test, &m), Err(CliError::Protocol(_))));
}

#[test]
fn transfer_files_are_written() {
    let w = World::new();
    let front = w.train(ViewTag::Front, "f");
    let top = w.train(ViewTag::Top, "t");
    let test = w.path("test");
    let out = transfer([&front, &top], &test, &test, &all_metrics()).unwrap();
    deca::transfer::write_transfer(&w.path("tr"), [&front, &top], &out).unwrap();
    let csv = std::fs::read_to_string(w.path("tr/transfer.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows[0].starts_with("train_view,test_view,metric,predictor"));
    assert_eq!(rows.len(), 1 + 4 * 3 * 2);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(w.path("tr/transfer.json")).unwrap()).unwrap();
    assert_eq!(json["audit"].as_array().unwrap().len(), 4);
}

#[test]
fn same_view_eval_matches_dataset_eval() {
    let w = World::new();
    let ckpt = w.train(ViewTag::Front, "run");
    let ds = Dataset::load(&w.path("test"), ViewTag::Front, false).unwrap();
    let a = evaluate_dataset(&ckpt, &ds, &all_metrics()).unwrap();
    let b = evaluate(&ckpt, &w.path("test"), Some(ViewTag::Front), &all_metrics()).unwrap();
    assert_eq!(serde_json::to_value(&a).unwrap(), serde_json::to_value(&b).unwrap());
}
