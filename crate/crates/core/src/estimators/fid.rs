//! Fréchet distance between Gaussian fits of lane-feature distributions,
//! mapped to F1 by linear regression.

use super::linalg::{gaussian_stats, sym_sqrt, GaussianStats};
use super::{fit_linear_regression, CalibrationArtifact, LabeledSet};
use crate::data::{CovarianceNorm, MiniDataset};
use crate::error::{Error, Result};

/// `‖μa − μb‖² + Tr(Σa) + Tr(Σb) − 2 Tr((Σa^½ Σb Σa^½)^½)`, clamped at 0.
///
/// The symmetric form has the same trace as `(Σa Σb)^½` for PSD inputs and
/// only needs a symmetric eigensolver.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.sigma.dim() != b.sigma.dim() {
        return Err(Error::dimension("gaussian statistics", a.dim(), b.dim()));
    }
    let mean_term: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y).powi(2)).sum();
    let root_a = sym_sqrt(&a.sigma)?;
    let inner = root_a.matmul(&b.sigma).matmul(&root_a).symmetrized();
    let cross = sym_sqrt(&inner)?.trace();
    let d = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Lane-feature statistics of a mini-dataset; `None` without predicted lanes.
pub fn lane_feature_stats(dataset: &MiniDataset, norm: CovarianceNorm) -> Result<Option<GaussianStats>> {
    let features = dataset.pred_lanes().map(|l| l.feature()).collect::<Result<Vec<_>>>()?;
    if features.is_empty() {
        return Ok(None);
    }
    gaussian_stats(features, norm).map(Some)
}

/// Distance used by the estimator: both covariances are shrunk towards
/// `ε·I` first so rank-deficient sets stay well-posed.
pub fn shrunk_distance(reference: &GaussianStats, other: &GaussianStats) -> Result<f64> {
    frechet_distance(&reference.shrunk(), &other.shrunk())
}

pub fn fid_calibrate<'a, I>(
    reference_features: I,
    val_sets: &[LabeledSet<'_>],
    norm: CovarianceNorm,
) -> Result<CalibrationArtifact>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let reference = match gaussian_stats(reference_features, norm) {
        Err(Error::Empty(_)) => {
            return Err(Error::Insufficient("reference corpus holds no lane features".into()))
        }
        other => other?,
    };
    if reference.n <= 1 {
        return Err(Error::Insufficient(format!(
            "reference corpus holds {} lane feature(s); a covariance needs at least 2",
            reference.n
        )));
    }
    if reference.n <= reference.dim() {
        log::warn!(
            "reference corpus has {} lane features for dimension {}; covariance is rank deficient",
            reference.n,
            reference.dim()
        );
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for set in val_sets {
        match lane_feature_stats(set.dataset, norm)? {
            Some(stats) => {
                xs.push(shrunk_distance(&reference, &stats)?);
                ys.push(set.f1);
            }
            None => log::warn!(
                "Fréchet calibration skips `{}`: no predicted lanes",
                set.dataset.dataset_id
            ),
        }
    }
    if xs.len() < 2 {
        return Err(Error::Insufficient(format!(
            "Fréchet regression needs at least 2 validation mini-datasets with lanes, got {}",
            xs.len()
        )));
    }
    Ok(CalibrationArtifact::Fid {
        reference,
        covariance: norm,
        regression: fit_linear_regression(&xs, &ys)?,
    })
}

pub fn fid_distance(dataset: &MiniDataset, artifact: &CalibrationArtifact) -> Result<Option<f64>> {
    let CalibrationArtifact::Fid {
        reference,
        covariance,
        ..
    } = artifact
    else {
        return Err(artifact.wrong("fid"));
    };
    match lane_feature_stats(dataset, *covariance)? {
        None => Ok(None),
        Some(stats) => shrunk_distance(reference, &stats).map(Some),
    }
}

pub fn fid_estimate(dataset: &MiniDataset, artifact: &CalibrationArtifact) -> Result<f64> {
    let distance = fid_distance(dataset, artifact)?;
    let CalibrationArtifact::Fid { regression, .. } = artifact else {
        unreachable!("checked by fid_distance");
    };
    Ok(distance.map_or(0.0, |d| regression.predict(d).clamp(0.0, 1.0)))
}
