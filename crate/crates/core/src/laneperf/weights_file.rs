use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::ImageEmbedder;
use super::network::{Architecture, NetworkWeights};
use super::TrainConfig;
use crate::data::Manifest;
use crate::error::{Error, Result};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

/// On-disk form of trained LanePerf weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub format_version: u32,
    pub manifest_fingerprint: String,
    /// Which embedder produced the image features the head was trained on.
    pub embedder: String,
    pub architecture: Architecture,
    pub seed: u64,
    pub config: TrainConfig,
    pub weights: NetworkWeights,
}

impl WeightsFile {
    pub fn new(weights: NetworkWeights, config: &TrainConfig, manifest: &Manifest, embedder: &dyn ImageEmbedder) -> Self {
        WeightsFile {
            format_version: WEIGHTS_FORMAT_VERSION,
            manifest_fingerprint: manifest.fingerprint(),
            embedder: embedder.kind().into(),
            architecture: weights.architecture(),
            seed: config.seed,
            config: config.clone(),
            weights,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("weights serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text)?;
        if file.format_version != WEIGHTS_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                expected: WEIGHTS_FORMAT_VERSION,
                found: file.format_version,
            });
        }
        file.weights.validate()?;
        if file.weights.architecture() != file.architecture {
            return Err(Error::Consistency(format!(
                "declared architecture {:?} does not match the stored tensors {:?}",
                file.architecture,
                file.weights.architecture()
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The weights, provided they were trained under `manifest` with an
    /// embedder of the same kind and dimension as `embedder`.
    pub fn checked(&self, manifest: &Manifest, embedder: &dyn ImageEmbedder) -> Result<&NetworkWeights> {
        let expected = manifest.fingerprint();
        if self.manifest_fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                artifact: self.manifest_fingerprint.clone(),
                manifest: expected,
            });
        }
        if self.embedder != embedder.kind() {
            return Err(Error::Consistency(format!(
                "weights were trained with the `{}` embedder, not `{}`",
                self.embedder,
                embedder.kind()
            )));
        }
        if self.architecture.d_lane != manifest.d_lane {
            return Err(Error::dimension("lane feature", manifest.d_lane, self.architecture.d_lane));
        }
        if self.architecture.d_img != embedder.dim() {
            return Err(Error::dimension("image embedding", embedder.dim(), self.architecture.d_img));
        }
        Ok(&self.weights)
    }
}
