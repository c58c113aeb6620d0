//! Baseline performance estimators and their calibration.

mod confidence;
mod energy;
mod fid;
pub mod linalg;
mod regression;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CovarianceNorm, Manifest, MiniDataset};
use crate::error::{Error, Result};

pub use confidence::{ac_estimate, atc_estimate, atc_fit, atc_objective, doc_calibrate, doc_estimate};
pub use energy::{
    ebm_calibrate, ebm_estimate, energy_from_logits, energy_score, mean_energy, temperature_grid,
};
pub use fid::{fid_calibrate, fid_distance, fid_estimate, frechet_distance, lane_feature_stats, shrunk_distance};
pub use linalg::{gaussian_stats, jacobi_eigen, sym_sqrt, GaussianStats, SquareMatrix};
pub use regression::{fit_linear_regression, LinearFit};

/// A validation mini-dataset paired with its measured F1.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub dataset: &'a MiniDataset,
    pub f1: f64,
}

impl<'a> LabeledSet<'a> {
    pub fn new(dataset: &'a MiniDataset, f1: f64) -> Self {
        LabeledSet { dataset, f1 }
    }
}

/// Fitted parameters of one calibrated baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "payload", rename_all = "snake_case")]
pub enum CalibrationArtifact {
    Doc {
        offset: f64,
    },
    Atc {
        threshold: f64,
    },
    Fid {
        reference: GaussianStats,
        covariance: CovarianceNorm,
        regression: LinearFit,
    },
    Ebm {
        temperature: f64,
        regression: LinearFit,
    },
}

impl CalibrationArtifact {
    pub fn method_name(&self) -> &'static str {
        match self {
            CalibrationArtifact::Doc { .. } => "doc",
            CalibrationArtifact::Atc { .. } => "atc",
            CalibrationArtifact::Fid { .. } => "fid",
            CalibrationArtifact::Ebm { .. } => "ebm",
        }
    }

    pub(crate) fn wrong(&self, expected: &str) -> Error {
        Error::WrongArtifact {
            expected: expected.into(),
            actual: self.method_name().into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Consistency(format!("{what} is not finite")))
            }
        };
        match self {
            CalibrationArtifact::Doc { offset } => finite(*offset, "offset"),
            CalibrationArtifact::Atc { threshold } => {
                finite(*threshold, "threshold")?;
                if !(0.0..=1.0).contains(threshold) {
                    return Err(Error::Consistency(format!("threshold {threshold} outside [0, 1]")));
                }
                Ok(())
            }
            CalibrationArtifact::Fid { regression, .. } => {
                finite(regression.slope, "slope")?;
                finite(regression.intercept, "intercept")
            }
            CalibrationArtifact::Ebm {
                temperature,
                regression,
            } => {
                if !(*temperature > 0.0) {
                    return Err(Error::Consistency(format!("temperature {temperature} must be > 0")));
                }
                finite(regression.slope, "slope")?;
                finite(regression.intercept, "intercept")
            }
        }
    }
}

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// On-disk form of a calibration artifact, tied to the manifest it was
/// fitted under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFile {
    pub format_version: u32,
    pub manifest_fingerprint: String,
    #[serde(flatten)]
    pub artifact: CalibrationArtifact,
}

impl ArtifactFile {
    pub fn new(artifact: CalibrationArtifact, manifest: &Manifest) -> Self {
        ArtifactFile {
            format_version: ARTIFACT_FORMAT_VERSION,
            manifest_fingerprint: manifest.fingerprint(),
            artifact,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ArtifactFile = serde_json::from_str(text)?;
        if file.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                expected: ARTIFACT_FORMAT_VERSION,
                found: file.format_version,
            });
        }
        file.artifact.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The artifact, provided it was fitted under `manifest`'s settings.
    pub fn checked(&self, manifest: &Manifest) -> Result<&CalibrationArtifact> {
        let expected = manifest.fingerprint();
        if self.manifest_fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                artifact: self.manifest_fingerprint.clone(),
                manifest: expected,
            });
        }
        Ok(&self.artifact)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::data::{lane_probability, Lane, MiniDataset, Role, Sample};

    fn sample(k: usize, lanes: Vec<Lane>) -> Sample {
        Sample {
            sample_id: format!("{k}"),
            segment_id: "seg".into(),
            pred_lanes: lanes,
            gt_lanes: None,
            image_embedding: None,
            image_ref: None,
        }
    }

    fn pts() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [1.0, 10.0]]
    }

    pub fn dataset_with_confidences(per_sample: &[&[f64]]) -> MiniDataset {
        let samples = per_sample
            .iter()
            .enumerate()
            .map(|(k, cs)| {
                sample(k, cs.iter().map(|&c| Lane::predicted(pts(), c, None, vec![])).collect())
            })
            .collect();
        MiniDataset::new("test", Role::Target, samples)
    }

    pub fn dataset_with_logits(per_sample: &[&[[f64; 2]]]) -> MiniDataset {
        let samples = per_sample
            .iter()
            .enumerate()
            .map(|(k, ls)| {
                sample(
                    k,
                    ls.iter()
                        .map(|&l| Lane::predicted(pts(), lane_probability(l), Some(l), vec![]))
                        .collect(),
                )
            })
            .collect();
        MiniDataset::new("test", Role::Target, samples)
    }

    /// One sample holding one lane per feature vector.
    pub fn dataset_with_features(features: &[Vec<f64>]) -> MiniDataset {
        let lanes = features
            .iter()
            .map(|f| Lane::predicted(pts(), 0.5, Some([0.0, 0.0]), f.clone()))
            .collect();
        MiniDataset::new("test", Role::Target, vec![sample(0, lanes)])
    }
}
