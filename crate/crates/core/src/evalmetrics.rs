//! Evaluation: segmentation scores, cloud-to-cloud error, tracking identity
//! accuracy, PCA fitting for pointer projectors, and runtime reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Duration;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FrameStats;
use crate::geometry::{KdTree, PointCloud};
use crate::semvote::{ClassId, LabelImage, UNLABELED};
use crate::tracker::{assign_hungarian, PcaProjector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub miou: f64,
    pub macc: f64,
    pub pacc: f64,
    pub per_class_iou: BTreeMap<ClassId, f64>,
}

/// Scores `pred` against `truth`, ignoring pixels where the truth is unlabelled.
///
/// mIoU averages over classes occurring in either raster; mAcc averages the
/// recall of classes occurring in the truth, since recall is undefined for the rest.
pub fn seg_metrics(pred: &LabelImage, truth: &LabelImage) -> Result<SegMetrics> {
    if !pred.data.same_dims(&truth.data) {
        return Err(Error::input(format!(
            "prediction is {:?}, truth is {:?}",
            pred.data.dims(),
            truth.data.dims()
        )));
    }
    let mut inter: BTreeMap<ClassId, u64> = BTreeMap::new();
    let mut pred_n: BTreeMap<ClassId, u64> = BTreeMap::new();
    let mut truth_n: BTreeMap<ClassId, u64> = BTreeMap::new();
    let mut labelled = 0u64;
    let mut correct = 0u64;
    for (&p, &t) in pred.data.data().iter().zip(truth.data.data()) {
        if t == UNLABELED {
            continue;
        }
        labelled += 1;
        *truth_n.entry(t).or_default() += 1;
        if p != UNLABELED {
            *pred_n.entry(p).or_default() += 1;
        }
        if p == t {
            correct += 1;
            *inter.entry(t).or_default() += 1;
        }
    }
    let classes: BTreeSet<ClassId> = pred_n.keys().chain(truth_n.keys()).copied().collect();
    let mut per_class_iou = BTreeMap::new();
    let mut recalls = Vec::new();
    for &c in &classes {
        let i = inter.get(&c).copied().unwrap_or(0);
        let tp = truth_n.get(&c).copied().unwrap_or(0);
        let union = pred_n.get(&c).copied().unwrap_or(0) + tp - i;
        per_class_iou.insert(c, i as f64 / union as f64);
        if tp > 0 {
            recalls.push(i as f64 / tp as f64);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            1.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let ious: Vec<f64> = per_class_iou.values().copied().collect();
    Ok(SegMetrics {
        miou: mean(&ious),
        macc: mean(&recalls),
        pacc: if labelled == 0 {
            1.0
        } else {
            correct as f64 / labelled as f64
        },
        per_class_iou,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudError {
    pub mean_mm: f64,
    pub std_mm: f64,
    pub max_mm: f64,
    #[serde(skip)]
    pub per_point: Vec<f64>,
}

impl CloudError {
    fn from_distances(per_point: Vec<f64>) -> Self {
        let n = per_point.len() as f64;
        let mean_mm = per_point.iter().sum::<f64>() / n;
        let var = per_point.iter().map(|d| (d - mean_mm).powi(2)).sum::<f64>() / n;
        let max_mm = per_point.iter().copied().fold(0.0, f64::max);
        CloudError {
            mean_mm,
            std_mm: var.sqrt(),
            max_mm,
            per_point,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudErrorMode {
    /// Estimated to truth only.
    #[default]
    OneWay,
    /// Both directions pooled.
    Chamfer,
}

fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    let tree = KdTree::new(&to.points);
    from.points
        .iter()
        .map(|p| tree.nearest(p).expect("non-empty tree").1)
        .collect()
}

/// Distance from each estimated point to its nearest truth point.
pub fn cloud_error(estimated: &PointCloud, truth: &PointCloud) -> Result<CloudError> {
    cloud_error_with(estimated, truth, CloudErrorMode::OneWay)
}

pub fn cloud_error_with(
    estimated: &PointCloud,
    truth: &PointCloud,
    mode: CloudErrorMode,
) -> Result<CloudError> {
    if estimated.is_empty() || truth.is_empty() {
        return Err(Error::input("cloud error needs two non-empty clouds"));
    }
    let mut d = nearest_distances(estimated, truth);
    if mode == CloudErrorMode::Chamfer {
        d.extend(nearest_distances(truth, estimated));
    }
    Ok(CloudError::from_distances(d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingScore {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Times a subject's predicted id differs from its previous appearance.
    pub id_switches: usize,
    /// Predicted id → truth subject under the optimal mapping.
    pub mapping: BTreeMap<u64, u64>,
}

/// Identity accuracy under the best one-to-one mapping of predicted ids onto
/// truth ids. `predicted[f][k]` and `truth[f][k]` describe the same detection.
pub fn tracking_score(predicted: &[Vec<u64>], truth: &[Vec<u64>]) -> Result<TrackingScore> {
    if predicted.len() != truth.len() {
        return Err(Error::input(format!(
            "{} predicted frames vs {} truth frames",
            predicted.len(),
            truth.len()
        )));
    }
    let mut counts: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut id_switches = 0;
    let mut total = 0;
    for (f, (p, t)) in predicted.iter().zip(truth).enumerate() {
        if p.len() != t.len() {
            return Err(Error::input(format!(
                "frame {f}: {} predicted ids vs {} truth ids",
                p.len(),
                t.len()
            )));
        }
        for (&pi, &ti) in p.iter().zip(t) {
            *counts.entry((pi, ti)).or_default() += 1;
            if last.insert(ti, pi).is_some_and(|prev| prev != pi) {
                id_switches += 1;
            }
            total += 1;
        }
    }
    let pred_ids: Vec<u64> = counts
        .keys()
        .map(|k| k.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let truth_ids: Vec<u64> = counts
        .keys()
        .map(|k| k.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let most = counts.values().copied().max().unwrap_or(0) as f64;
    let cost = DMatrix::from_fn(pred_ids.len(), truth_ids.len(), |i, j| {
        most - counts
            .get(&(pred_ids[i], truth_ids[j]))
            .copied()
            .unwrap_or(0) as f64
    });
    let a = assign_hungarian(&cost)?;
    let mut correct = 0;
    let mut mapping = BTreeMap::new();
    for (i, j) in a.pairs {
        correct += counts
            .get(&(pred_ids[i], truth_ids[j]))
            .copied()
            .unwrap_or(0);
        mapping.insert(pred_ids[i], truth_ids[j]);
    }
    Ok(TrackingScore {
        accuracy: if total == 0 {
            1.0
        } else {
            correct as f64 / total as f64
        },
        correct,
        total,
        id_switches,
        mapping,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    /// `dims`×D, orthonormal rows in order of decreasing variance.
    pub components: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Every eigenvalue of the sample covariance, descending.
    pub variances: Vec<f64>,
    pub rank_deficient: bool,
}

impl PcaFit {
    /// Share of the total variance captured by the kept components.
    pub fn explained_fraction(&self) -> f64 {
        let total: f64 = self.variances.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.variances[..self.components.nrows()]
            .iter()
            .sum::<f64>()
            / total
    }

    pub fn projector(&self) -> Result<PcaProjector> {
        PcaProjector::new(self.components.clone(), self.mean.clone())
    }
}

/// Principal directions of `samples`.
///
/// Each component is signed so that its largest-magnitude entry is positive.
/// When fewer than `dims` directions carry variance the remainder is an
/// arbitrary orthonormal completion and a warning is logged.
pub fn fit_pca(samples: &[Vec<f64>], dims: usize) -> Result<PcaFit> {
    if samples.len() < dims + 1 {
        return Err(Error::input(format!(
            "PCA with {dims} components needs at least {} samples, got {}",
            dims + 1,
            samples.len()
        )));
    }
    let d = samples[0].len();
    if dims == 0 || dims > d {
        return Err(Error::input(format!(
            "cannot keep {dims} of {d} dimensions"
        )));
    }
    if samples
        .iter()
        .any(|s| s.len() != d || s.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::input(
            "PCA samples must be finite and of equal length",
        ));
    }
    let n = samples.len();
    let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centred = x;
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let variances: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let mut components = DMatrix::zeros(dims, d);
    for (r, &i) in order.iter().take(dims).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        components.row_mut(r).copy_from(&v.transpose());
    }

    let scale = variances.first().copied().unwrap_or(0.0);
    let rank_deficient = variances[dims - 1] <= scale * 1e-12 + f64::MIN_POSITIVE;
    if rank_deficient {
        log::warn!(
            "PCA input spans fewer than {dims} directions; trailing components are arbitrary"
        );
    }
    Ok(PcaFit {
        components,
        mean,
        variances,
        rank_deficient,
    })
}

/// One frame of a paired with/without-labels run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub frame: u64,
    pub scene_points: usize,
    pub frame_points: usize,
    pub computations_without_labels: u64,
    pub computations_with_labels: u64,
    pub count_factor: f64,
    /// Median overlap time across trials, seconds.
    pub time_without_labels: f64,
    pub time_with_labels: f64,
    pub time_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub trials: usize,
    pub rows: Vec<RuntimeRow>,
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Runs `run(use_labels)` `trials` times in each mode and tabulates the
/// per-frame medians. Runs are strictly sequential.
pub fn runtime_report(
    trials: usize,
    mut run: impl FnMut(bool) -> Result<Vec<FrameStats>>,
) -> Result<RuntimeReport> {
    if trials == 0 {
        return Err(Error::input("runtime report needs at least one trial"));
    }
    let mut with: Vec<Vec<FrameStats>> = Vec::new();
    let mut without: Vec<Vec<FrameStats>> = Vec::new();
    for _ in 0..trials {
        without.push(run(false)?);
        with.push(run(true)?);
    }
    let frames = without[0].len();
    if with.iter().chain(&without).any(|r| r.len() != frames) {
        return Err(Error::Internal(
            "paired runs produced different frame counts".into(),
        ));
    }
    let mut rows = Vec::with_capacity(frames);
    for f in 0..frames {
        let base = &without[0][f];
        let labelled = &with[0][f];
        if (base.scene_points, base.frame_points) != (labelled.scene_points, labelled.frame_points)
        {
            return Err(Error::Internal(format!(
                "frame {}: paired runs saw different point counts",
                base.frame
            )));
        }
        let t_without = median(without.iter().map(|r| r[f].overlap_time).collect()).as_secs_f64();
        let t_with = median(with.iter().map(|r| r[f].overlap_time).collect()).as_secs_f64();
        rows.push(RuntimeRow {
            frame: base.frame,
            scene_points: base.scene_points,
            frame_points: base.frame_points,
            computations_without_labels: base.computations_without_labels,
            computations_with_labels: base.computations_with_labels,
            count_factor: ratio(
                base.computations_without_labels as f64,
                base.computations_with_labels as f64,
            ),
            time_without_labels: t_without,
            time_with_labels: t_with,
            time_factor: ratio(t_without, t_with),
        });
    }
    Ok(RuntimeReport { trials, rows })
}

impl RuntimeReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>5} {:>7} {:>7} {:>14} {:>14} {:>8} {:>10} {:>10} {:>8}",
            "frame",
            "scene",
            "frame",
            "dist w/o lbl",
            "dist w/ lbl",
            "factor",
            "t w/o (s)",
            "t w/ (s)",
            "t factor"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>5} {:>7} {:>7} {:>14} {:>14} {:>8.2} {:>10.6} {:>10.6} {:>8.2}",
                r.frame,
                r.scene_points,
                r.frame_points,
                r.computations_without_labels,
                r.computations_with_labels,
                r.count_factor,
                r.time_without_labels,
                r.time_with_labels,
                r.time_factor
            );
        }
        s
    }

    /// One JSON object per row.
    pub fn to_json_lines(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain data") + "\n")
            .collect()
    }
}
