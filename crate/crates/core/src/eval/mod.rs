//! Ground-truth F1: thick-line lane IoU, optimal one-to-one matching and
//! micro-aggregated precision / recall / F1.

mod assign;
mod raster;

use serde::{Deserialize, Serialize};

use crate::data::{Lane, Manifest, MiniDataset, Sample};
use crate::error::Result;

pub use assign::max_weight_assignment;
pub use raster::{lane_iou, rasterize_lane, LaneMask};

/// Geometry and threshold used to score lanes against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub stroke_width: f64,
    pub canvas: (u32, u32),
    pub iou_threshold: f64,
}

impl From<&Manifest> for EvalParams {
    fn from(m: &Manifest) -> Self {
        EvalParams {
            stroke_width: m.lane_stroke_width,
            canvas: m.canvas(),
            iou_threshold: m.iou_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub counts: Counts,
    /// `(pred index, gt index, iou)` for every true positive.
    pub matched_pairs: Vec<(usize, usize, f64)>,
}

/// Precision, recall and F1 with the counts they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    /// No predictions and no ground truth at all; scored 1 by convention.
    pub vacuous: bool,
}

/// F1 from pooled counts. With no predictions and no ground truth the score
/// is 1; a zero denominator otherwise makes its term 0.
pub fn f1_from_counts(counts: Counts) -> F1Summary {
    let Counts { tp, fp, fn_ } = counts;
    if tp + fp == 0 && tp + fn_ == 0 {
        return F1Summary {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            counts,
            vacuous: true,
        };
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    F1Summary {
        precision,
        recall,
        f1,
        counts,
        vacuous: false,
    }
}

/// IoU of every `(pred, gt)` pair, rows indexed by prediction.
pub fn iou_matrix(preds: &[Lane], gts: &[Lane], params: &EvalParams) -> Result<Vec<Vec<f64>>> {
    let raster = |l: &Lane| rasterize_lane(l, params.stroke_width, params.canvas);
    let pred_masks = preds.iter().map(raster).collect::<Result<Vec<_>>>()?;
    let gt_masks = gts.iter().map(raster).collect::<Result<Vec<_>>>()?;
    Ok(pred_masks
        .iter()
        .map(|p| gt_masks.iter().map(|g| p.iou(g)).collect())
        .collect())
}

/// Optimal matching on an IoU matrix: maximizes total IoU over pairs whose
/// IoU reaches `threshold`; pairs below it are never matched.
pub fn match_from_iou(iou: &[Vec<f64>], n_gt: usize, threshold: f64) -> MatchResult {
    let n_pred = iou.len();
    let thresholded: Vec<Vec<f64>> = iou
        .iter()
        .map(|row| row.iter().map(|&v| if v >= threshold { v } else { 0.0 }).collect())
        .collect();
    let assignment = if n_gt == 0 {
        vec![None; n_pred]
    } else {
        max_weight_assignment(&thresholded)
    };
    let matched_pairs: Vec<(usize, usize, f64)> = assignment
        .iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| (p, g, iou[p][g])))
        .filter(|&(_, _, v)| v >= threshold)
        .collect();
    let tp = matched_pairs.len();
    MatchResult {
        counts: Counts {
            tp,
            fp: n_pred - tp,
            fn_: n_gt - tp,
        },
        matched_pairs,
    }
}

pub fn match_lanes(preds: &[Lane], gts: &[Lane], manifest: &Manifest) -> Result<MatchResult> {
    match_lanes_with(preds, gts, &EvalParams::from(manifest))
}

pub fn match_lanes_with(preds: &[Lane], gts: &[Lane], params: &EvalParams) -> Result<MatchResult> {
    let iou = iou_matrix(preds, gts, params)?;
    Ok(match_from_iou(&iou, gts.len(), params.iou_threshold))
}

pub fn sample_counts(sample: &Sample, params: &EvalParams) -> Result<Counts> {
    let gt = sample.gt()?;
    Ok(match_lanes_with(&sample.pred_lanes, gt, params)?.counts)
}

/// F1 of one frame on its own.
pub fn per_sample_f1(sample: &Sample, manifest: &Manifest) -> Result<f64> {
    Ok(f1_from_counts(sample_counts(sample, &EvalParams::from(manifest))?).f1)
}

/// Micro-aggregated F1: counts are pooled over every sample before the
/// ratios are formed.
pub fn dataset_f1(dataset: &MiniDataset, manifest: &Manifest) -> Result<F1Summary> {
    dataset_f1_with(dataset, &EvalParams::from(manifest))
}

pub fn dataset_f1_with(dataset: &MiniDataset, params: &EvalParams) -> Result<F1Summary> {
    use rayon::prelude::*;
    let per_sample = dataset
        .samples
        .par_iter()
        .map(|s| sample_counts(s, params))
        .collect::<Result<Vec<_>>>()?;
    let total = per_sample.into_iter().fold(Counts::default(), |a, b| a + b);
    Ok(f1_from_counts(total))
}
