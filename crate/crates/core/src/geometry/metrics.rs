//! Chamfer distance and F-score between point sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{icp_align, Aabb, IcpConfig, KdTree, PointCloud};
use crate::error::{Error, Result};
use crate::transform::Vec3;

/// Multiplier applied to reported Chamfer distances.
pub const DEFAULT_REPORT_FACTOR: f64 = 100.0;

/// Fraction of the ground-truth bounding box's longest edge used as the F-score threshold.
pub const F_SCORE_FRACTION: f64 = 0.02;

/// Distances from each query point to its nearest neighbour in `tree`, in query order.
pub(crate) fn nn_distances(queries: &[Vec3], tree: &KdTree) -> Vec<f64> {
    queries
        .par_iter()
        .map(|q| tree.nearest(q).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric Chamfer distance: average of the two directed mean nearest-neighbour distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let ta = KdTree::new(&a.points);
    let tb = KdTree::new(&b.points);
    let ab = mean(&nn_distances(&a.points, &tb));
    let ba = mean(&nn_distances(&b.points, &ta));
    Ok(0.5 * (ab + ba))
}

pub fn f_score_threshold(gt_bounds: &Aabb) -> f64 {
    F_SCORE_FRACTION * gt_bounds.longest_edge()
}

/// F-score in percent at distance `threshold`: harmonic mean of the fraction of
/// predicted points within `threshold` of the ground truth (precision) and the
/// fraction of ground-truth points within `threshold` of the prediction (recall).
pub fn f_score_at(pred: &PointCloud, gt: &PointCloud, threshold: f64) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let tp = KdTree::new(&pred.points);
    let tg = KdTree::new(&gt.points);
    let within = |d: &Vec<f64>| d.iter().filter(|x| **x <= threshold).count() as f64 / d.len() as f64;
    let precision = within(&nn_distances(&pred.points, &tg));
    let recall = within(&nn_distances(&gt.points, &tp));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// F-score with the threshold taken from `gt_bounds`.
pub fn f_score(pred: &PointCloud, gt: &PointCloud, gt_bounds: &Aabb) -> Result<f64> {
    f_score_at(pred, gt, f_score_threshold(gt_bounds))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub cd: f64,
    pub f2: f64,
    pub n_src: usize,
    pub n_dst: usize,
    pub threshold: f64,
}

/// Aligns `pred` onto `gt` (when `icp` is given) and scores it.
pub fn evaluate(
    pred: &PointCloud,
    gt: &PointCloud,
    icp: Option<&IcpConfig>,
    report_factor: f64,
) -> Result<MetricRecord> {
    let aligned = match icp {
        Some(cfg) => icp_align(pred, gt, cfg)?.aligned,
        None => pred.clone(),
    };
    let threshold = f_score_threshold(&gt.bounds());
    Ok(MetricRecord {
        cd: chamfer(&aligned, gt)? * report_factor,
        f2: f_score_at(&aligned, gt, threshold)?,
        n_src: pred.len(),
        n_dst: gt.len(),
        threshold,
    })
}
