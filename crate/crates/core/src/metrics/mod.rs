//! Pose metrics (mAP within a radius, MPJPE, Procrustes-aligned MPJPE),
//! body-part report layout, latent-entity clustering and transfer tables.

mod procrustes;

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use procrustes::{procrustes_align, Similarity};

use crate::synth::ViewTag;
use crate::{Error, Result};

/// One frame of `J` joints.
pub type Pose = Vec<[f64; 3]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricTag {
    #[serde(rename = "map_0.1m")]
    Map,
    #[serde(rename = "mpjpe_mm")]
    Mpjpe,
    #[serde(rename = "mpjpe_procrustes_mm")]
    MpjpeProcrustes,
}

impl MetricTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricTag::Map => "map_0.1m",
            MetricTag::Mpjpe => "mpjpe_mm",
            MetricTag::MpjpeProcrustes => "mpjpe_procrustes_mm",
        }
    }

    /// Accepts `map`, `mpjpe`, `mpjpe-procrustes` and the report tags.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "map" | "map-0.1m" => Ok(MetricTag::Map),
            "mpjpe" | "mpjpe-mm" => Ok(MetricTag::Mpjpe),
            "mpjpe-procrustes" | "mpjpe-procrustes-mm" | "pa-mpjpe" => Ok(MetricTag::MpjpeProcrustes),
            other => Err(Error::arg("metrics", alloc::format!("unknown metric {other:?}"))),
        }
    }
}

/// Report rows: named groups of joints plus the upper/lower split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartGrouping {
    pub groups: Vec<(String, Vec<usize>)>,
    pub upper_body: Vec<usize>,
    pub lower_body: Vec<usize>,
}

impl PartGrouping {
    /// Rows for the 15-joint layout in `ITOP_JOINTS` order.
    pub fn itop15() -> Self {
        let g = |name: &str, j: &[usize]| (name.to_string(), j.to_vec());
        PartGrouping {
            groups: vec![
                g("Head", &[0]),
                g("Neck", &[1]),
                g("Shoulders", &[2, 3]),
                g("Elbows", &[4, 5]),
                g("Hands", &[6, 7]),
                g("Torso", &[8]),
                g("Hip", &[9, 10]),
                g("Knees", &[11, 12]),
                g("Feet", &[13, 14]),
            ],
            upper_body: (0..=8).collect(),
            lower_body: (9..=14).collect(),
        }
    }

    /// One group per joint, all joints upper body.
    pub fn per_joint(joints: usize) -> Self {
        PartGrouping {
            groups: (0..joints).map(|j| (alloc::format!("joint{j}"), vec![j])).collect(),
            upper_body: (0..joints).collect(),
            lower_body: Vec::new(),
        }
    }

    pub fn validate(&self, joints: usize) -> Result<()> {
        let all = self
            .groups
            .iter()
            .flat_map(|(_, j)| j)
            .chain(&self.upper_body)
            .chain(&self.lower_body);
        for &j in all {
            if j >= joints {
                return Err(Error::arg("grouping", alloc::format!("joint {j} out of range for {joints} joints")));
            }
        }
        if self.groups.iter().any(|(_, j)| j.is_empty()) {
            return Err(Error::arg("grouping", "empty group"));
        }
        Ok(())
    }
}

fn average(values: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    idx.iter().map(|&j| values[j]).sum::<f64>() / idx.len() as f64
}

/// Per-joint scores and the rows derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric_tag: MetricTag,
    pub per_joint: Vec<f64>,
    pub per_part: Vec<(String, f64)>,
    pub upper_body: f64,
    pub lower_body: f64,
    /// Average over joints, not over part rows.
    pub mean: f64,
    pub frames: usize,
    pub grouping: PartGrouping,
}

impl EvalReport {
    pub fn from_per_joint(metric_tag: MetricTag, per_joint: Vec<f64>, frames: usize, grouping: &PartGrouping) -> Result<Self> {
        grouping.validate(per_joint.len())?;
        let all: Vec<usize> = (0..per_joint.len()).collect();
        Ok(EvalReport {
            metric_tag,
            per_part: grouping
                .groups
                .iter()
                .map(|(name, idx)| (name.clone(), average(&per_joint, idx)))
                .collect(),
            upper_body: average(&per_joint, &grouping.upper_body),
            lower_body: average(&per_joint, &grouping.lower_body),
            mean: average(&per_joint, &all),
            frames,
            grouping: grouping.clone(),
            per_joint,
        })
    }

    /// Mean recomputed from `per_joint`.
    pub fn recompute_mean(&self) -> f64 {
        self.per_joint.iter().sum::<f64>() / self.per_joint.len() as f64
    }
}

fn check_batch(op: &'static str, pred: &[Pose], gt: &[Pose]) -> Result<usize> {
    if gt.is_empty() {
        return Err(Error::EmptyInput { op });
    }
    let j = gt[0].len();
    if pred.len() != gt.len() {
        return Err(Error::shape(op, &[gt.len(), j, 3], &[pred.len(), j, 3]));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != j || g.len() != j {
            return Err(Error::shape(op, &[gt.len(), j, 3], &[pred.len(), p.len(), 3]));
        }
    }
    if j == 0 {
        return Err(Error::EmptyInput { op });
    }
    Ok(j)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

/// Percentage of frames whose joint lies within `radius` metres of ground truth.
pub fn map_at(pred: &[Pose], gt: &[Pose], radius: f64, grouping: &PartGrouping) -> Result<EvalReport> {
    let j = check_batch("map_at", pred, gt)?;
    if !(radius > 0.0) {
        return Err(Error::arg("map_at", "radius must be positive"));
    }
    let mut hits = vec![0usize; j];
    for (p, g) in pred.iter().zip(gt) {
        for k in 0..j {
            if dist(p[k], g[k]) < radius {
                hits[k] += 1;
            }
        }
    }
    let n = gt.len() as f64;
    let per_joint = hits.into_iter().map(|h| 100.0 * h as f64 / n).collect();
    EvalReport::from_per_joint(MetricTag::Map, per_joint, gt.len(), grouping)
}

/// Mean Euclidean joint error over frames, in millimetres.
pub fn mpjpe(pred: &[Pose], gt: &[Pose], grouping: &PartGrouping) -> Result<EvalReport> {
    let j = check_batch("mpjpe", pred, gt)?;
    let mut sums = vec![0.0; j];
    for (p, g) in pred.iter().zip(gt) {
        for k in 0..j {
            sums[k] += dist(p[k], g[k]);
        }
    }
    let n = gt.len() as f64;
    let per_joint = sums.into_iter().map(|s| 1000.0 * s / n).collect();
    EvalReport::from_per_joint(MetricTag::Mpjpe, per_joint, gt.len(), grouping)
}

/// MPJPE after aligning each predicted frame to its ground truth.
pub fn mpjpe_procrustes(pred: &[Pose], gt: &[Pose], grouping: &PartGrouping) -> Result<EvalReport> {
    check_batch("mpjpe_procrustes", pred, gt)?;
    let aligned = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| procrustes_align(p, g))
        .collect::<Result<Vec<_>>>()?;
    let mut r = mpjpe(&aligned, gt, grouping)?;
    r.metric_tag = MetricTag::MpjpeProcrustes;
    Ok(r)
}

pub fn evaluate_metric(tag: MetricTag, pred: &[Pose], gt: &[Pose], radius: f64, grouping: &PartGrouping) -> Result<EvalReport> {
    match tag {
        MetricTag::Map => map_at(pred, gt, radius, grouping),
        MetricTag::Mpjpe => mpjpe(pred, gt, grouping),
        MetricTag::MpjpeProcrustes => mpjpe_procrustes(pred, gt, grouping),
    }
}

/// Every prediction set to the per-joint mean of `train`.
pub fn mean_pose(train: &[Pose]) -> Result<Pose> {
    if train.is_empty() || train[0].is_empty() {
        return Err(Error::EmptyInput { op: "mean_pose" });
    }
    let j = train[0].len();
    let mut m = vec![[0.0; 3]; j];
    for p in train {
        if p.len() != j {
            return Err(Error::shape("mean_pose", &[j, 3], &[p.len(), 3]));
        }
        for k in 0..j {
            for c in 0..3 {
                m[k][c] += p[k][c] / train.len() as f64;
            }
        }
    }
    Ok(m)
}

/// Latent entities with their joint labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySet {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Mean silhouette coefficient under Euclidean distance.
pub fn entity_cluster_score(entities: &EntitySet) -> Result<f64> {
    let n = entities.vectors.len();
    if n != entities.labels.len() {
        return Err(Error::shape("entity_cluster_score", &[n], &[entities.labels.len()]));
    }
    let labels: BTreeSet<usize> = entities.labels.iter().copied().collect();
    if labels.len() < 2 {
        return Err(Error::arg("entity_cluster_score", "need at least two labels"));
    }
    let max_label = *labels.iter().next_back().unwrap_or(&0);
    let mut counts = vec![0usize; max_label + 1];
    for &l in &entities.labels {
        counts[l] += 1;
    }
    if labels.iter().any(|&l| counts[l] < 2) {
        return Err(Error::arg("entity_cluster_score", "every label needs at least two vectors"));
    }
    let dim = entities.vectors.first().map_or(0, Vec::len);
    if entities.vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::arg("entity_cluster_score", "vectors differ in length"));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; max_label + 1];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let vi = &entities.vectors[i];
        for (k, vk) in entities.vectors.iter().enumerate() {
            if k != i {
                let d2: f64 = vi.iter().zip(vk).map(|(a, b)| (a - b) * (a - b)).sum();
                sums[entities.labels[k]] += libm::sqrt(d2);
            }
        }
        let li = entities.labels[i];
        let a = sums[li] / (counts[li] - 1) as f64;
        let b = labels
            .iter()
            .filter(|&&l| l != li)
            .map(|&l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}

/// Errors when any test frame id also appears in a training or validation set.
pub fn audit_disjoint(test: &[u64], seen: &[(&str, &[u64])]) -> Result<()> {
    let test: BTreeSet<u64> = test.iter().copied().collect();
    for (name, ids) in seen {
        let overlap: Vec<u64> = ids.iter().filter(|i| test.contains(i)).copied().collect();
        if !overlap.is_empty() {
            return Err(Error::arg(
                "protocol",
                alloc::format!(
                    "{} test frame ids also appear in the {name} set (first: {})",
                    overlap.len(),
                    overlap[0]
                ),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub train_view: ViewTag,
    pub test_view: ViewTag,
    pub reports: Vec<EvalReport>,
}

/// Train-view by test-view grid of reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferTable {
    pub cells: Vec<TransferCell>,
}

impl TransferTable {
    /// Requires exactly the four front/top combinations, each with the same metric list.
    pub fn new(mut cells: Vec<TransferCell>) -> Result<Self> {
        let views = [ViewTag::Front, ViewTag::Top];
        cells.sort_by_key(|c| (c.train_view, c.test_view));
        let combos: Vec<(ViewTag, ViewTag)> = cells.iter().map(|c| (c.train_view, c.test_view)).collect();
        let want: Vec<(ViewTag, ViewTag)> = views.iter().flat_map(|&a| views.iter().map(move |&b| (a, b))).collect();
        if combos != want {
            return Err(Error::arg("transfer", "the table needs one cell per train/test view pair"));
        }
        let tags: Vec<MetricTag> = cells[0].reports.iter().map(|r| r.metric_tag).collect();
        if tags.is_empty()
            || cells
                .iter()
                .any(|c| c.reports.iter().map(|r| r.metric_tag).collect::<Vec<_>>() != tags)
        {
            return Err(Error::arg("transfer", "every cell needs the same non-empty metric list"));
        }
        Ok(TransferTable { cells })
    }

    pub fn cell(&self, train: ViewTag, test: ViewTag) -> Option<&TransferCell> {
        self.cells.iter().find(|c| c.train_view == train && c.test_view == test)
    }
}
