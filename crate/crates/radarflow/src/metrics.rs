//! Flow evaluation against ground truth: range-binned endpoint error,
//! dynamic IoU and class-stratified endpoint error.
//!
//! All metrics operate on the non-ego flow component and are computed over a
//! square grid centered on the ego vehicle. A point counts as dynamic when
//! its non-ego flow magnitude strictly exceeds the dynamic flow threshold;
//! endpoint-error stratification uses the ground-truth mask, the IoU
//! compares the masks of both sides. Sums use pairwise summation so results
//! are bit-stable regardless of how the work is chunked.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{MotionClass, Vec3};

/// Pairwise (cascade) summation: O(log n) error growth and a fixed
/// reduction order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(pairwise_sum(values) / values.len() as f64)
    }
}

/// Keep only the points inside the square grid `|x| <= half_extent`,
/// `|y| <= half_extent`. Returns the kept indices.
pub fn crop_to_grid(
    positions: &[Vec3],
    pred: &[Vec3],
    gt: &[Vec3],
    half_extent: f64,
) -> Result<Vec<usize>> {
    if positions.len() != pred.len() || positions.len() != gt.len() {
        return Err(Error::CountMismatch {
            context: "crop_to_grid".into(),
            expected: positions.len(),
            actual: pred.len().min(gt.len()),
        });
    }
    Ok(positions
        .iter()
        .enumerate()
        .filter(|(_, p)| p.x.abs() <= half_extent && p.y.abs() <= half_extent)
        .map(|(i, _)| i)
        .collect())
}

fn bin_of(range: f64, edges: &[f64]) -> Option<usize> {
    if range < edges[0] {
        return None;
    }
    for k in 0..edges.len() - 1 {
        if range < edges[k + 1] {
            return Some(k);
        }
    }
    Some(edges.len() - 1)
}

fn bin_label(edges: &[f64], k: usize) -> String {
    if k + 1 < edges.len() {
        format!("{}-{}", edges[k], edges[k + 1])
    } else {
        format!("{}+", edges[k])
    }
}

/// Mean endpoint error of ground-truth-dynamic points per radial bin.
/// Bins without such points report `None`.
pub fn range_wise_dynamic_epe(
    positions: &[Vec3],
    pred: &[Vec3],
    gt: &[Vec3],
    edges: &[f64],
    dynamic_threshold: f64,
) -> Vec<Option<f64>> {
    let n_bins = edges.len();
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for i in 0..positions.len() {
        if gt[i].norm() > dynamic_threshold {
            if let Some(k) = bin_of(positions[i].norm(), edges) {
                errors[k].push((pred[i] - gt[i]).norm());
            }
        }
    }
    errors.iter().map(|e| mean(e)).collect()
}

/// Jaccard index of predicted vs ground-truth dynamic masks per radial bin.
/// Bins where TP + FP + FN is zero report `None`.
pub fn range_wise_dynamic_iou(
    positions: &[Vec3],
    pred: &[Vec3],
    gt: &[Vec3],
    edges: &[f64],
    dynamic_threshold: f64,
) -> Vec<Option<f64>> {
    let n_bins = edges.len();
    let mut tp = vec![0usize; n_bins];
    let mut fp = vec![0usize; n_bins];
    let mut fun = vec![0usize; n_bins];
    for i in 0..positions.len() {
        let p_dyn = pred[i].norm() > dynamic_threshold;
        let g_dyn = gt[i].norm() > dynamic_threshold;
        if !p_dyn && !g_dyn {
            continue;
        }
        if let Some(k) = bin_of(positions[i].norm(), edges) {
            match (p_dyn, g_dyn) {
                (true, true) => tp[k] += 1,
                (true, false) => fp[k] += 1,
                (false, true) => fun[k] += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    (0..n_bins)
        .map(|k| {
            let denom = tp[k] + fp[k] + fun[k];
            (denom > 0).then(|| tp[k] as f64 / denom as f64)
        })
        .collect()
}

/// Endpoint error stratified by motion class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThreeWayEpe {
    pub fd: Option<f64>,
    pub fs: Option<f64>,
    pub bs: Option<f64>,
    /// Arithmetic mean over the classes that are present.
    pub mean: Option<f64>,
    pub fd_count: usize,
    pub fs_count: usize,
    pub bs_count: usize,
}

/// Per-class mean endpoint error; a missing class stays absent and the mean
/// covers the present classes (with a warning).
pub fn three_way_epe(pred: &[Vec3], gt: &[Vec3], classes: &[MotionClass]) -> ThreeWayEpe {
    let mut buckets: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..pred.len() {
        let k = match classes[i] {
            MotionClass::ForegroundDynamic => 0,
            MotionClass::ForegroundStatic => 1,
            MotionClass::BackgroundStatic => 2,
        };
        buckets[k].push((pred[i] - gt[i]).norm());
    }
    let fd = mean(&buckets[0]);
    let fs = mean(&buckets[1]);
    let bs = mean(&buckets[2]);
    let present: Vec<f64> = [fd, fs, bs].iter().flatten().copied().collect();
    if present.len() < 3 {
        log::warn!(
            "three-way EPE: only {} of 3 classes present; mean covers the present classes",
            present.len()
        );
    }
    let mean_epe = if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    };
    ThreeWayEpe {
        fd,
        fs,
        bs,
        mean: mean_epe,
        fd_count: buckets[0].len(),
        fs_count: buckets[1].len(),
        bs_count: buckets[2].len(),
    }
}

/// Metrics of one radial bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReport {
    pub label: String,
    pub lower: f64,
    pub upper: Option<f64>,
    pub dynamic_epe: Option<f64>,
    pub dynamic_iou: Option<f64>,
    pub gt_dynamic_points: usize,
    pub points: usize,
}

/// Full evaluation of one (possibly pooled) point set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub bin_edges: Vec<f64>,
    pub bins: Vec<BinReport>,
    pub three_way: Option<ThreeWayEpe>,
    pub total_points: usize,
    pub cropped_points: usize,
    pub dynamic_flow_threshold: f64,
    pub grid_half_extent: f64,
}

/// Crop to the grid and compute every metric.
///
/// `classes` is optional; without it the class-stratified error is skipped.
pub fn evaluate(
    positions: &[Vec3],
    pred: &[Vec3],
    gt: &[Vec3],
    classes: Option<&[MotionClass]>,
    edges: &[f64],
    dynamic_threshold: f64,
    grid_half_extent: f64,
) -> Result<EvalReport> {
    assert!(!edges.is_empty(), "need at least one bin edge");
    if let Some(c) = classes {
        if c.len() != positions.len() {
            return Err(Error::CountMismatch {
                context: "evaluate: classes".into(),
                expected: positions.len(),
                actual: c.len(),
            });
        }
    }
    let keep = crop_to_grid(positions, pred, gt, grid_half_extent)?;
    let pos: Vec<Vec3> = keep.iter().map(|&i| positions[i]).collect();
    let pr: Vec<Vec3> = keep.iter().map(|&i| pred[i]).collect();
    let gtv: Vec<Vec3> = keep.iter().map(|&i| gt[i]).collect();

    let epe = range_wise_dynamic_epe(&pos, &pr, &gtv, edges, dynamic_threshold);
    let iou = range_wise_dynamic_iou(&pos, &pr, &gtv, edges, dynamic_threshold);

    let mut per_bin_points = vec![0usize; edges.len()];
    let mut per_bin_dynamic = vec![0usize; edges.len()];
    for (p, g) in pos.iter().zip(&gtv) {
        if let Some(k) = bin_of(p.norm(), edges) {
            per_bin_points[k] += 1;
            if g.norm() > dynamic_threshold {
                per_bin_dynamic[k] += 1;
            }
        }
    }

    let bins = (0..edges.len())
        .map(|k| BinReport {
            label: bin_label(edges, k),
            lower: edges[k],
            upper: (k + 1 < edges.len()).then(|| edges[k + 1]),
            dynamic_epe: epe[k],
            dynamic_iou: iou[k],
            gt_dynamic_points: per_bin_dynamic[k],
            points: per_bin_points[k],
        })
        .collect();

    let three_way = classes.map(|c| {
        let cls: Vec<MotionClass> = keep.iter().map(|&i| c[i]).collect();
        three_way_epe(&pr, &gtv, &cls)
    });

    Ok(EvalReport {
        bin_edges: edges.to_vec(),
        bins,
        three_way,
        total_points: positions.len(),
        cropped_points: keep.len(),
        dynamic_flow_threshold: dynamic_threshold,
        grid_half_extent,
    })
}

impl EvalReport {
    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        fn fmt(v: Option<f64>) -> String {
            match v {
                Some(x) => format!("{x:.4}"),
                None => "-".to_string(),
            }
        }
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>12} {:>12} {:>10} {:>10}\n",
            "bin", "dyn EPE (m)", "dyn IoU", "gt dyn", "points"
        ));
        for b in &self.bins {
            out.push_str(&format!(
                "{:<10} {:>12} {:>12} {:>10} {:>10}\n",
                b.label,
                fmt(b.dynamic_epe),
                fmt(b.dynamic_iou),
                b.gt_dynamic_points,
                b.points
            ));
        }
        if let Some(tw) = &self.three_way {
            out.push_str(&format!(
                "three-way EPE (m): FD {} | FS {} | BS {} | mean {}\n",
                fmt(tw.fd),
                fmt(tw.fs),
                fmt(tw.bs),
                fmt(tw.mean)
            ));
        }
        out.push_str(&format!(
            "points: {} in grid of {} total\n",
            self.cropped_points, self.total_points
        ));
        out
    }
}
