//! Confidence-based estimators: average confidence (AC), difference of
//! confidence (DOC) and average thresholded confidence (ATC).
//!
//! All three pool every predicted lane of a mini-dataset; a mini-dataset
//! with no predicted lanes at all is scored 0.

use super::{CalibrationArtifact, LabeledSet};
use crate::data::MiniDataset;
use crate::error::{Error, Result};

fn confidences(dataset: &MiniDataset) -> Result<Vec<f64>> {
    dataset.pred_lanes().map(|l| l.confidence()).collect()
}

/// Mean softmax confidence over every predicted lane.
pub fn ac_estimate(dataset: &MiniDataset) -> Result<f64> {
    let c = confidences(dataset)?;
    if c.is_empty() {
        return Ok(0.0);
    }
    Ok(c.iter().sum::<f64>() / c.len() as f64)
}

/// Offset = mean over validation sets of `F1 - AC`.
pub fn doc_calibrate(val_sets: &[LabeledSet<'_>]) -> Result<CalibrationArtifact> {
    if val_sets.is_empty() {
        return Err(Error::Empty("no validation mini-datasets"));
    }
    let mut total = 0.0;
    for set in val_sets {
        total += set.f1 - ac_estimate(set.dataset)?;
    }
    Ok(CalibrationArtifact::Doc {
        offset: total / val_sets.len() as f64,
    })
}

pub fn doc_estimate(dataset: &MiniDataset, artifact: &CalibrationArtifact) -> Result<f64> {
    let CalibrationArtifact::Doc { offset } = artifact else {
        return Err(artifact.wrong("doc"));
    };
    Ok((ac_estimate(dataset)? + offset).clamp(0.0, 1.0))
}

/// Fraction of the (ascending) confidences strictly above `t`.
fn fraction_above(sorted: &[f64], t: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let at_or_below = sorted.partition_point(|&c| c <= t);
    (sorted.len() - at_or_below) as f64 / sorted.len() as f64
}

/// Summed absolute discrepancy between the thresholded fraction and the
/// actual F1 over the validation sets.
pub fn atc_objective(val_sets: &[LabeledSet<'_>], t: f64) -> Result<f64> {
    let mut total = 0.0;
    for set in val_sets {
        let mut c = confidences(set.dataset)?;
        c.sort_by(f64::total_cmp);
        total += (fraction_above(&c, t) - set.f1).abs();
    }
    Ok(total)
}

/// Picks the threshold minimizing [`atc_objective`] over the candidates
/// `{0} ∪ {observed confidences}`; ties go to the smallest threshold.
pub fn atc_fit(val_sets: &[LabeledSet<'_>]) -> Result<CalibrationArtifact> {
    if val_sets.is_empty() {
        return Err(Error::Empty("no validation mini-datasets"));
    }
    let sorted_sets: Vec<(Vec<f64>, f64)> = val_sets
        .iter()
        .map(|s| {
            let mut c = confidences(s.dataset)?;
            c.sort_by(f64::total_cmp);
            Ok((c, s.f1))
        })
        .collect::<Result<_>>()?;
    let mut candidates: Vec<f64> = sorted_sets.iter().flat_map(|(c, _)| c.iter().copied()).collect();
    if candidates.is_empty() {
        return Err(Error::NoPredictedLanes("the validation mini-datasets".into()));
    }
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best = (f64::INFINITY, 0.0);
    for &t in &candidates {
        let objective: f64 = sorted_sets
            .iter()
            .map(|(c, f1)| (fraction_above(c, t) - f1).abs())
            .sum();
        if objective < best.0 {
            best = (objective, t);
        }
    }
    Ok(CalibrationArtifact::Atc { threshold: best.1 })
}

pub fn atc_estimate(dataset: &MiniDataset, artifact: &CalibrationArtifact) -> Result<f64> {
    let CalibrationArtifact::Atc { threshold } = artifact else {
        return Err(artifact.wrong("atc"));
    };
    let c = confidences(dataset)?;
    if c.is_empty() {
        return Ok(0.0);
    }
    let above = c.iter().filter(|&&v| v > *threshold).count();
    Ok(above as f64 / c.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::test_support::dataset_with_confidences;

    #[test]
    fn ac_pools_lanes() {
        let d = dataset_with_confidences(&[&[0.8, 0.6]]);
        assert!((ac_estimate(&d).unwrap() - 0.7).abs() < 1e-12);
        let d = dataset_with_confidences(&[&[0.9], &[0.5, 0.7]]);
        assert!((ac_estimate(&d).unwrap() - 0.7).abs() < 1e-12);
        let d = dataset_with_confidences(&[&[], &[]]);
        assert_eq!(ac_estimate(&d).unwrap(), 0.0);
    }

    #[test]
    fn doc_offsets() {
        let d = dataset_with_confidences(&[&[0.7]]);
        let art = doc_calibrate(&[LabeledSet::new(&d, 0.6)]).unwrap();
        let CalibrationArtifact::Doc { offset } = art else { panic!() };
        assert!((offset + 0.1).abs() < 1e-12);

        let a = dataset_with_confidences(&[&[0.7]]);
        let b = dataset_with_confidences(&[&[0.5]]);
        let art = doc_calibrate(&[LabeledSet::new(&a, 0.6), LabeledSet::new(&b, 0.6)]).unwrap();
        let CalibrationArtifact::Doc { offset } = art else { panic!() };
        assert!(offset.abs() < 1e-12);

        let empty = dataset_with_confidences(&[&[]]);
        let art = doc_calibrate(&[LabeledSet::new(&empty, 0.0)]).unwrap();
        assert_eq!(art, CalibrationArtifact::Doc { offset: 0.0 });

        assert!(doc_calibrate(&[]).is_err());
    }

    #[test]
    fn doc_estimates_clamp() {
        let art = CalibrationArtifact::Doc { offset: -0.1 };
        let d = dataset_with_confidences(&[&[0.5]]);
        assert!((doc_estimate(&d, &art).unwrap() - 0.4).abs() < 1e-12);
        let d = dataset_with_confidences(&[&[0.05]]);
        assert_eq!(doc_estimate(&d, &art).unwrap(), 0.0);
        let zero = CalibrationArtifact::Doc { offset: 0.0 };
        let d = dataset_with_confidences(&[&[0.3, 0.9], &[0.45]]);
        assert_eq!(doc_estimate(&d, &zero).unwrap(), ac_estimate(&d).unwrap());
        assert!(matches!(
            doc_estimate(&d, &CalibrationArtifact::Atc { threshold: 0.5 }),
            Err(Error::WrongArtifact { .. })
        ));
    }

    #[test]
    fn atc_single_set() {
        let d = dataset_with_confidences(&[&[0.9, 0.8, 0.6, 0.2]]);
        let art = atc_fit(&[LabeledSet::new(&d, 0.5)]).unwrap();
        assert_eq!(art, CalibrationArtifact::Atc { threshold: 0.6 });
        let art = atc_fit(&[LabeledSet::new(&d, 1.0)]).unwrap();
        assert_eq!(art, CalibrationArtifact::Atc { threshold: 0.0 });
    }

    #[test]
    fn atc_requires_lanes() {
        let d = dataset_with_confidences(&[&[], &[]]);
        assert!(matches!(
            atc_fit(&[LabeledSet::new(&d, 0.5)]),
            Err(Error::NoPredictedLanes(_))
        ));
    }

    #[test]
    fn atc_estimates() {
        let art = CalibrationArtifact::Atc { threshold: 0.5 };
        let d = dataset_with_confidences(&[&[0.9, 0.4]]);
        assert_eq!(atc_estimate(&d, &art).unwrap(), 0.5);
        let art = CalibrationArtifact::Atc { threshold: 0.0 };
        let d = dataset_with_confidences(&[&[0.9, 0.4], &[0.01]]);
        assert_eq!(atc_estimate(&d, &art).unwrap(), 1.0);
        let d = dataset_with_confidences(&[&[]]);
        assert_eq!(atc_estimate(&d, &art).unwrap(), 0.0);
    }
}
