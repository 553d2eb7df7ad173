//! Batched inference, metric reports and their files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use deca_core::losses::LossReport;
use deca_core::metrics::{evaluate_metric, EvalReport, MetricTag, Pose};
use deca_core::model::Model;
use deca_core::synth::camera::{transform_point, Extrinsics};
use deca_core::synth::ViewTag;
use deca_core::{Graph, SeededRng};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{EvalConfig, ExperimentConfig};
use crate::data::Prepared;
use crate::dataset::Dataset;
use crate::error::{CliError, Result};

pub const MEAN_CONVENTION: &str = "mean = average of the per-joint values; upper_body and lower_body average the joints listed in grouping";

/// Outputs of a dropout-free pass over part of a split.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Metres, in the model's training camera frame.
    pub poses: Vec<Pose>,
    /// `[N, J, 16]` flattened.
    pub entities: Vec<f32>,
    /// Batch-size weighted mean loss when requested.
    pub loss: Option<LossReport>,
}

fn accumulate(acc: &mut Option<LossReport>, r: &LossReport, w: f64) {
    match acc {
        None => {
            *acc = Some(LossReport {
                per_task: r.per_task.iter().map(|(&t, &v)| (t, v * w)).collect(),
                total: r.total * w,
                weights: r.weights.clone(),
            })
        }
        Some(a) => {
            for (t, v) in &r.per_task {
                *a.per_task.entry(*t).or_insert(0.0) += v * w;
            }
            a.total += r.total * w;
            a.weights = r.weights.clone();
        }
    }
}

/// Weighted sum of reports divided by the total weight.
pub(crate) fn mean_reports(reports: &[(LossReport, f64)]) -> Option<LossReport> {
    let total_w: f64 = reports.iter().map(|(_, w)| w).sum();
    let mut acc = None;
    for (r, w) in reports {
        accumulate(&mut acc, r, w / total_w);
    }
    acc
}

pub fn infer(model: &Model<f32>, data: &Prepared, idx: &[usize], batch_size: usize, with_loss: bool) -> Result<Inference> {
    let j = model.config.joints;
    let mut poses = Vec::with_capacity(idx.len());
    let mut entities = Vec::with_capacity(idx.len() * j * 16);
    let mut losses = Vec::new();
    // Dropout is off, so this stream is never drawn from.
    let mut rng = SeededRng::seed_from_u64(0);
    for chunk in idx.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let out = model.forward(&mut g, data.input_batch(chunk)?, false, &mut rng)?;
        if with_loss {
            let targets = data.targets(chunk, &model.target_norm)?;
            let (total, per_task) = model.loss(&mut g, &out, &targets)?;
            losses.push((model.report(&g, total, &per_task), chunk.len() as f64));
        }
        let raw = g.value(out.heads[&deca_core::model::Task::Pose3d]).data();
        for row in raw.chunks(3 * j) {
            let r: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let m = model.target_norm.denormalize(&r);
            poses.push(m.chunks(3).map(|c| [c[0], c[1], c[2]]).collect());
        }
        entities.extend_from_slice(g.value(out.entities).data());
    }
    Ok(Inference {
        poses,
        entities,
        loss: if with_loss { mean_reports(&losses) } else { None },
    })
}

/// Map poses from one camera frame into another.
pub fn transform_poses(poses: &[Pose], t: &Extrinsics) -> Vec<Pose> {
    poses.iter().map(|p| p.iter().map(|&q| transform_point(t, q)).collect()).collect()
}

pub fn metric_reports(pred: &[Pose], gt: &[Pose], metrics: &[MetricTag], eval: &EvalConfig) -> Result<Vec<EvalReport>> {
    metrics
        .iter()
        .map(|&m| Ok(evaluate_metric(m, pred, gt, eval.radius, &eval.grouping)?))
        .collect()
}

/// Rigid transform from the checkpoint's training camera into `test_view`,
/// taken from the cameras listed in the dataset manifest.
pub fn view_transform(ds: &Dataset, train_view: ViewTag, test_view: ViewTag) -> Result<Option<Extrinsics>> {
    if train_view == test_view {
        return Ok(None);
    }
    let find = |v: ViewTag| {
        ds.manifest
            .cameras
            .iter()
            .find(|c| c.view == v)
            .ok_or_else(|| CliError::Format(format!("{} lists no {} camera", ds.dir.display(), v.as_str())))
    };
    Ok(Some(find(train_view)?.relative_to(find(test_view)?)))
}

/// Everything one evaluation produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub dataset: PathBuf,
    pub train_view: ViewTag,
    pub test_view: ViewTag,
    pub frame_ids: Vec<u64>,
    pub checkpoint_epoch: usize,
    pub reports: Vec<EvalReport>,
    /// Per-joint mean of the checkpoint's training poses, scored the same way.
    pub mean_pose_baseline: Vec<EvalReport>,
}

/// Score a checkpoint on one view of a dataset. Predictions for another view
/// are carried into that camera's frame through the rig transform.
pub fn evaluate_dataset(ckpt: &Checkpoint, ds: &Dataset, metrics: &[MetricTag]) -> Result<EvalOutput> {
    let cfg = &ckpt.config;
    let data = Prepared::from_dataset(ds, &cfg.model)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let inf = infer(&ckpt.model, &data, &idx, cfg.eval.batch_size, false)?;
    let train_view = cfg.data.view;
    let t = view_transform(ds, train_view, ds.view)?;
    let mean: Pose = ckpt.model.target_norm.mean.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    let mut baseline = vec![mean; data.len()];
    let pred = match &t {
        Some(t) => {
            baseline = transform_poses(&baseline, t);
            transform_poses(&inf.poses, t)
        }
        None => inf.poses,
    };
    Ok(EvalOutput {
        dataset: ds.dir.clone(),
        train_view,
        test_view: ds.view,
        frame_ids: data.frame_ids.clone(),
        checkpoint_epoch: ckpt.epoch,
        reports: metric_reports(&pred, &data.poses, metrics, &cfg.eval)?,
        mean_pose_baseline: metric_reports(&baseline, &data.poses, metrics, &cfg.eval)?,
    })
}

pub fn evaluate(ckpt: &Checkpoint, data_dir: &Path, view: Option<ViewTag>, metrics: &[MetricTag]) -> Result<EvalOutput> {
    let view = view.unwrap_or(ckpt.config.data.view);
    let ds = Dataset::load(data_dir, view, ckpt.config.model.domain == deca_core::model::Domain::Rgb)?;
    evaluate_dataset(ckpt, &ds, metrics)
}

pub fn parse_metrics(list: &str) -> Result<Vec<MetricTag>> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m = MetricTag::parse(part)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no metrics requested".into()));
    }
    Ok(out)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    mean_convention: &'static str,
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    output: &'a EvalOutput,
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Format(e.to_string())
}

/// Header row shared by report CSVs: per-joint columns, part rows, then the summaries.
pub(crate) fn report_columns(r: &EvalReport, joint_names: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = joint_names.iter().map(|n| format!("joint:{n}")).collect();
    cols.extend(r.per_part.iter().map(|(n, _)| format!("part:{n}")));
    cols.extend(["upper_body", "lower_body", "mean"].map(String::from));
    cols
}

pub(crate) fn report_values(r: &EvalReport) -> Vec<String> {
    let mut v: Vec<String> = r.per_joint.iter().map(|x| x.to_string()).collect();
    v.extend(r.per_part.iter().map(|(_, x)| x.to_string()));
    v.extend([r.upper_body, r.lower_body, r.mean].map(|x| x.to_string()));
    v
}

/// Comment lines opening every CSV report.
pub(crate) fn csv_preamble(eval: &EvalConfig) -> String {
    let grouping = serde_json::to_string(&eval.grouping).unwrap_or_default();
    format!("# {MEAN_CONVENTION}\n# radius_m = {}\n# grouping = {grouping}\n", eval.radius)
}

/// Writes `report.json` and `report.csv` into `out_dir`.
pub fn write_eval(out_dir: &Path, config: &ExperimentConfig, output: &EvalOutput, joint_names: &[String]) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let file = ReportFile {
        mean_convention: MEAN_CONVENTION,
        config,
        output,
    };
    let path = out_dir.join("report.json");
    let mut json = serde_json::to_vec_pretty(&file)?;
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;

    let mut buf = csv_preamble(&config.eval).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        if let Some(first) = output.reports.first() {
            let mut header = vec!["metric".to_string(), "predictor".to_string()];
            header.extend(report_columns(first, joint_names));
            w.write_record(&header).map_err(csv_err)?;
        }
        for (who, reports) in [("model", &output.reports), ("mean_pose", &output.mean_pose_baseline)] {
            for r in reports {
                let mut row = vec![r.metric_tag.as_str().to_string(), who.to_string()];
                row.extend(report_values(r));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| CliError::io(out_dir, e))?;
    }
    let path = out_dir.join("report.csv");
    fs::write(&path, buf).map_err(|e| CliError::io(&path, e))
}

/// Reads the model rows of a `report.csv` back as `metric -> column -> value`.
pub fn read_report_csv(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.get(1) != Some("model") {
            continue;
        }
        let mut row = BTreeMap::new();
        for (h, v) in headers.iter().zip(rec.iter()).skip(2) {
            row.insert(h.to_string(), v.parse::<f64>().map_err(|e| CliError::Format(format!("{h}: {e}")))?);
        }
        out.insert(rec[0].to_string(), row);
    }
    Ok(out)
}
