//! Cross-view protocol: two checkpoints trained on opposite cameras, scored on
//! both views, with a frame-id audit on every cell.

use std::fs;
use std::path::Path;

use deca_core::metrics::{audit_disjoint, MetricTag, TransferCell, TransferTable};
use deca_core::model::Domain;
use deca_core::synth::ViewTag;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use crate::eval::{csv_preamble, evaluate_dataset, report_columns, report_values, EvalOutput, MEAN_CONVENTION};

#[derive(Clone, Debug, Serialize)]
pub struct AuditEntry {
    pub train_view: ViewTag,
    pub test_view: ViewTag,
    pub test_frames: usize,
    pub train_frames: usize,
    pub val_frames: usize,
    pub disjoint: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferOutput {
    pub table: TransferTable,
    pub baselines: TransferTable,
    pub audit: Vec<AuditEntry>,
    pub cells: Vec<EvalOutput>,
}

/// Fails with a protocol violation when `test` shares a frame with the checkpoint's splits.
pub fn audit(ckpt: &Checkpoint, test_frame_ids: &[u64]) -> Result<()> {
    audit_disjoint(
        test_frame_ids,
        &[("train", &ckpt.train_frame_ids), ("validation", &ckpt.val_frame_ids)],
    )
    .map_err(|e| CliError::Protocol(e.to_string()))
}

/// Cells are keyed by the view each checkpoint records as its training view,
/// so the argument order does not matter as long as the two views differ.
pub fn transfer(ckpts: [&Checkpoint; 2], data_front: &Path, data_top: &Path, metrics: &[MetricTag]) -> Result<TransferOutput> {
    let views = [ckpts[0].config.data.view, ckpts[1].config.data.view];
    if views[0] == views[1] {
        return Err(CliError::Protocol(format!(
            "both checkpoints were trained on the {} view",
            views[0].as_str()
        )));
    }
    let mut cells = Vec::new();
    let mut baselines = Vec::new();
    let mut audits = Vec::new();
    let mut outputs = Vec::new();
    for ckpt in ckpts {
        for (test_view, dir) in [(ViewTag::Front, data_front), (ViewTag::Top, data_top)] {
            let ds = Dataset::load(dir, test_view, ckpt.config.model.domain == Domain::Rgb)?;
            let ids = ds.frame_ids();
            audit(ckpt, &ids)?;
            audits.push(AuditEntry {
                train_view: ckpt.config.data.view,
                test_view,
                test_frames: ids.len(),
                train_frames: ckpt.train_frame_ids.len(),
                val_frames: ckpt.val_frame_ids.len(),
                disjoint: true,
            });
            let out = evaluate_dataset(ckpt, &ds, metrics)?;
            cells.push(TransferCell {
                train_view: out.train_view,
                test_view,
                reports: out.reports.clone(),
            });
            baselines.push(TransferCell {
                train_view: out.train_view,
                test_view,
                reports: out.mean_pose_baseline.clone(),
            });
            outputs.push(out);
        }
    }
    outputs.sort_by_key(|o| (o.train_view, o.test_view));
    audits.sort_by_key(|a| (a.train_view, a.test_view));
    Ok(TransferOutput {
        table: TransferTable::new(cells)?,
        baselines: TransferTable::new(baselines)?,
        audit: audits,
        cells: outputs,
    })
}

#[derive(Serialize)]
struct TransferFile<'a> {
    mean_convention: &'static str,
    checkpoints: [CkptSummary<'a>; 2],
    #[serde(flatten)]
    output: &'a TransferOutput,
}

#[derive(Serialize)]
struct CkptSummary<'a> {
    train_view: ViewTag,
    epoch: usize,
    config: &'a crate::config::ExperimentConfig,
}

fn summary(c: &Checkpoint) -> CkptSummary<'_> {
    CkptSummary {
        train_view: c.config.data.view,
        epoch: c.epoch,
        config: &c.config,
    }
}

/// Writes `transfer.json` and `transfer.csv` into `out_dir`.
pub fn write_transfer(out_dir: &Path, ckpts: [&Checkpoint; 2], output: &TransferOutput) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let file = TransferFile {
        mean_convention: MEAN_CONVENTION,
        checkpoints: ckpts.map(summary),
        output,
    };
    let path = out_dir.join("transfer.json");
    let mut json = serde_json::to_vec_pretty(&file)?;
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;

    let eval = &ckpts[0].config.eval;
    let names = crate::export::joint_names(&ckpts[0].config);
    let mut buf = csv_preamble(eval).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let first = &output.table.cells[0].reports[0];
        let mut header: Vec<String> = ["train_view", "test_view", "metric", "predictor"].map(String::from).to_vec();
        header.extend(report_columns(first, &names));
        w.write_record(&header).map_err(|e| CliError::Format(e.to_string()))?;
        for (who, table) in [("model", &output.table), ("mean_pose", &output.baselines)] {
            for cell in &table.cells {
                for r in &cell.reports {
                    let mut row = vec![
                        cell.train_view.as_str().to_string(),
                        cell.test_view.as_str().to_string(),
                        r.metric_tag.as_str().to_string(),
                        who.to_string(),
                    ];
                    row.extend(report_values(r));
                    w.write_record(&row).map_err(|e| CliError::Format(e.to_string()))?;
                }
            }
        }
        w.flush().map_err(|e| CliError::io(out_dir, e))?;
    }
    let path = out_dir.join("transfer.csv");
    fs::write(&path, buf).map_err(|e| CliError::io(&path, e))
}
