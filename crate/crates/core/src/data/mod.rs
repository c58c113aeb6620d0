//! Domain types shared by every stage: lanes, samples, mini-datasets, the
//! dataset manifest and the line-delimited record format.

mod manifest;
mod record;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{parse_manifest, CovarianceNorm, Manifest, SegmentEntry};
pub use record::{load_segment, parse_record, read_records, record_line, write_segment};

/// Tolerance for the stored confidence versus `softmax(logits)[lane]`.
pub const CONFIDENCE_LOGIT_TOLERANCE: f64 = 1e-6;

/// A predicted or ground-truth lane instance.
///
/// Ground-truth lanes carry only `points`. Predicted lanes additionally carry
/// the detector's softmax confidence, the optional `(lane, background)` logit
/// pair and the lane feature vector taken before the detection head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lane {
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

impl Lane {
    pub fn ground_truth(points: Vec<[f64; 2]>) -> Self {
        Lane {
            points,
            confidence: None,
            logits: None,
            feature: None,
        }
    }

    pub fn predicted(
        points: Vec<[f64; 2]>,
        confidence: f64,
        logits: Option<[f64; 2]>,
        feature: Vec<f64>,
    ) -> Self {
        Lane {
            points,
            confidence: Some(confidence),
            logits,
            feature: Some(feature),
        }
    }

    pub fn confidence(&self) -> Result<f64> {
        self.confidence
            .ok_or_else(|| Error::schema("pred_lanes[].confidence", "missing on a predicted lane"))
    }

    pub fn logits(&self) -> Result<[f64; 2]> {
        self.logits
            .ok_or_else(|| Error::schema("pred_lanes[].logits", "missing on a predicted lane"))
    }

    pub fn feature(&self) -> Result<&[f64]> {
        self.feature
            .as_deref()
            .ok_or_else(|| Error::schema("pred_lanes[].feature", "missing on a predicted lane"))
    }

    pub(crate) fn validate_points(&self, field: &str) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::schema(
                format!("{field}.points"),
                format!("need at least 2 points, got {}", self.points.len()),
            ));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::schema(format!("{field}.points"), "non-finite coordinate"));
        }
        Ok(())
    }

    /// Checks the invariants of a predicted lane against the declared
    /// feature dimension.
    pub fn validate_predicted(&self, d_lane: usize) -> Result<()> {
        self.validate_points("pred_lanes[]")?;
        let confidence = self.confidence()?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::schema(
                "pred_lanes[].confidence",
                format!("{confidence} is outside [0, 1]"),
            ));
        }
        if let Some(logits) = self.logits {
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::schema("pred_lanes[].logits", "non-finite logit"));
            }
            let implied = lane_probability(logits);
            if (implied - confidence).abs() > CONFIDENCE_LOGIT_TOLERANCE {
                return Err(Error::Consistency(format!(
                    "confidence {confidence} disagrees with softmax(logits) = {implied}"
                )));
            }
        }
        let feature = self.feature()?;
        if feature.len() != d_lane {
            return Err(Error::dimension("lane feature", d_lane, feature.len()));
        }
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("pred_lanes[].feature", "non-finite value"));
        }
        Ok(())
    }
}

/// Softmax probability of the lane class for a `(lane, background)` logit pair.
pub fn lane_probability(logits: [f64; 2]) -> f64 {
    let [lane, background] = logits;
    1.0 / (1.0 + (background - lane).exp())
}

/// One frame: the detector's output and, when labeled, its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub sample_id: String,
    pub segment_id: String,
    pub pred_lanes: Vec<Lane>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_lanes: Option<Vec<Lane>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl Sample {
    pub fn gt(&self) -> Result<&[Lane]> {
        self.gt_lanes
            .as_deref()
            .ok_or_else(|| Error::MissingGroundTruth(format!("sample {}", self.sample_id)))
    }

    pub fn is_labeled(&self) -> bool {
        self.gt_lanes.is_some()
    }
}

/// Where a mini-dataset sits in the calibration protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Lane features used as the reference distribution for the Fréchet baseline.
    SourceTrainRef,
    /// Labeled source-domain data used to calibrate every estimator.
    SourceVal,
    /// Target-domain data whose F1 is estimated.
    Target,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::SourceTrainRef => "source_train_ref",
            Role::SourceVal => "source_val",
            Role::Target => "target",
        }
    }
}

/// An ordered run of consecutive frames: the unit whose F1 is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniDataset {
    pub dataset_id: String,
    pub role: Role,
    /// Target-domain family used to group benchmark rows.
    pub family: Option<String>,
    /// Coarser grouping of families (e.g. scene, weather, time of day).
    pub group: Option<String>,
    pub samples: Vec<Sample>,
}

impl MiniDataset {
    pub fn new(dataset_id: impl Into<String>, role: Role, samples: Vec<Sample>) -> Self {
        MiniDataset {
            dataset_id: dataset_id.into(),
            role,
            family: None,
            group: None,
            samples,
        }
    }

    /// Predicted lanes pooled over every sample, in sample order.
    pub fn pred_lanes(&self) -> impl Iterator<Item = &Lane> {
        self.samples.iter().flat_map(|s| s.pred_lanes.iter())
    }

    pub fn pred_lane_count(&self) -> usize {
        self.samples.iter().map(|s| s.pred_lanes.len()).sum()
    }

    pub fn is_labeled(&self) -> bool {
        self.samples.iter().all(Sample::is_labeled)
    }

    /// Splits into consecutive mini-datasets of `size` frames following
    /// [`chunk_ranges`]. A single chunk keeps the original id; otherwise
    /// chunks are suffixed `:000`, `:001`, ...
    pub fn chunk(&self, size: usize) -> Result<Vec<MiniDataset>> {
        let ranges = chunk_ranges(self.samples.len(), size)?;
        let single = ranges.len() == 1;
        Ok(ranges
            .into_iter()
            .enumerate()
            .map(|(k, range)| MiniDataset {
                dataset_id: if single {
                    self.dataset_id.clone()
                } else {
                    format!("{}:{k:03}", self.dataset_id)
                },
                role: self.role,
                family: self.family.clone(),
                group: self.group.clone(),
                samples: self.samples[range].to_vec(),
            })
            .collect())
    }
}

/// Consecutive non-overlapping ranges of `size` items. A trailing short
/// range is kept when it holds at least half of `size`, otherwise it is
/// merged into the previous range. Input shorter than `size` yields one range.
pub fn chunk_ranges(len: usize, size: usize) -> Result<Vec<Range<usize>>> {
    if size == 0 {
        return Err(Error::Config("mini-dataset size must be at least 1".into()));
    }
    if len == 0 {
        return Err(Error::Empty("no samples to chunk"));
    }
    let mut ranges: Vec<Range<usize>> = (0..len / size).map(|k| k * size..(k + 1) * size).collect();
    let rest = len % size;
    if rest > 0 {
        let start = len - rest;
        match ranges.last_mut() {
            Some(last) if 2 * rest < size => last.end = len,
            _ => ranges.push(start..len),
        }
    }
    Ok(ranges)
}

/// Splits every dataset with [`MiniDataset::chunk`], preserving order.
pub fn chunk_minidatasets(datasets: &[MiniDataset], size: usize) -> Result<Vec<MiniDataset>> {
    let mut out = Vec::new();
    for dataset in datasets {
        out.extend(dataset.chunk(size)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lens(len: usize, size: usize) -> Vec<usize> {
        chunk_ranges(len, size)
            .unwrap()
            .into_iter()
            .map(|r| r.len())
            .collect()
    }

    #[test]
    fn chunk_rule_examples() {
        assert_eq!(lens(200, 200), vec![200]);
        assert_eq!(lens(120, 50), vec![50, 70]);
        assert_eq!(lens(50, 50), vec![50]);
        assert_eq!(lens(125, 50), vec![50, 50, 25]);
        assert_eq!(lens(100, 200), vec![100]);
        assert_eq!(lens(30, 200), vec![30]);
    }

    #[test]
    fn chunk_rejects_empty_and_zero_size() {
        assert!(matches!(chunk_ranges(0, 10), Err(Error::Empty(_))));
        assert!(chunk_ranges(10, 0).is_err());
    }

    #[test]
    fn lane_probability_matches_two_class_softmax() {
        let logits = [1.3f64, -0.4];
        let e0 = logits[0].exp();
        let e1 = logits[1].exp();
        assert!((lane_probability(logits) - e0 / (e0 + e1)).abs() < 1e-15);
        assert_eq!(lane_probability([0.0, 0.0]), 0.5);
    }

    #[test]
    fn predicted_lane_validation() {
        let lane = Lane::predicted(vec![[0.0, 0.0], [1.0, 5.0]], 0.5, Some([0.0, 0.0]), vec![0.0; 3]);
        lane.validate_predicted(3).unwrap();
        assert!(matches!(
            lane.validate_predicted(4),
            Err(Error::Dimension { expected: 4, actual: 3, .. })
        ));

        let mut off = lane.clone();
        off.confidence = Some(0.5 + 2e-6);
        assert!(matches!(off.validate_predicted(3), Err(Error::Consistency(_))));

        let mut short = lane.clone();
        short.points.truncate(1);
        assert!(short.validate_predicted(3).is_err());

        let mut gt_like = lane;
        gt_like.confidence = None;
        assert!(gt_like.validate_predicted(3).is_err());
    }
}
