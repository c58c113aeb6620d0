use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Role;
use crate::error::{Error, Result};

fn default_iou_threshold() -> f64 {
    0.5
}

fn default_stroke_width() -> f64 {
    30.0
}

fn default_minidataset_size() -> usize {
    200
}

fn default_confidence_note() -> f64 {
    0.4
}

/// Covariance normalization used for lane-feature statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceNorm {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Sample,
}

impl CovarianceNorm {
    fn as_str(self) -> &'static str {
        match self {
            CovarianceNorm::Population => "population",
            CovarianceNorm::Sample => "sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEntry {
    pub id: String,
    /// Record file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Optional per-segment declaration, checked against the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_lane: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_img: Option<usize>,
}

/// Dataset manifest: geometry, dimensions, evaluation parameters and the
/// list of segment record files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub image_width: u32,
    pub image_height: u32,
    pub d_lane: usize,
    pub d_img: usize,
    #[serde(default = "default_iou_threshold")]
    pub iou_threshold: f64,
    #[serde(default = "default_stroke_width")]
    pub lane_stroke_width: f64,
    #[serde(default = "default_minidataset_size")]
    pub minidataset_size: usize,
    /// Detector post-processing threshold; informational only.
    #[serde(default = "default_confidence_note")]
    pub confidence_threshold_note: f64,
    #[serde(default)]
    pub covariance: CovarianceNorm,
    pub segments: Vec<SegmentEntry>,
    /// Directory that relative segment paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    /// A manifest with default evaluation parameters and no segments.
    pub fn new(image_width: u32, image_height: u32, d_lane: usize, d_img: usize) -> Self {
        Manifest {
            image_width,
            image_height,
            d_lane,
            d_img,
            iou_threshold: default_iou_threshold(),
            lane_stroke_width: default_stroke_width(),
            minidataset_size: default_minidataset_size(),
            confidence_threshold_note: default_confidence_note(),
            covariance: CovarianceNorm::default(),
            segments: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn parse_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: Manifest =
            serde_json::from_str(text).map_err(|e| schema_error_from_serde(&e))?;
        manifest.base_dir = base_dir.into();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 {
            return Err(Error::schema("image_width", "must be > 0"));
        }
        if self.image_height == 0 {
            return Err(Error::schema("image_height", "must be > 0"));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::schema(
                "iou_threshold",
                format!("{} is outside (0, 1)", self.iou_threshold),
            ));
        }
        if !(self.lane_stroke_width >= 1.0 && self.lane_stroke_width.is_finite()) {
            return Err(Error::schema("lane_stroke_width", "must be a finite value >= 1"));
        }
        if self.minidataset_size == 0 {
            return Err(Error::schema("minidataset_size", "must be >= 1"));
        }
        let mut ids = BTreeSet::new();
        for (k, seg) in self.segments.iter().enumerate() {
            if !ids.insert(seg.id.as_str()) {
                return Err(Error::schema(
                    format!("segments[{k}].id"),
                    format!("duplicate segment id `{}`", seg.id),
                ));
            }
            if let Some(d) = seg.d_lane.filter(|&d| d != self.d_lane) {
                return Err(Error::schema(
                    format!("segments[{k}].d_lane"),
                    format!("segment declares {d}, manifest declares {}", self.d_lane),
                ));
            }
            if let Some(d) = seg.d_img.filter(|&d| d != self.d_img) {
                return Err(Error::schema(
                    format!("segments[{k}].d_img"),
                    format!("segment declares {d}, manifest declares {}", self.d_img),
                ));
            }
        }
        Ok(())
    }

    pub fn segment_path(&self, entry: &SegmentEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn segments_with_role(&self, role: Role) -> impl Iterator<Item = &SegmentEntry> {
        self.segments.iter().filter(move |s| s.role == role)
    }

    pub fn canvas(&self) -> (u32, u32) {
        (self.image_width, self.image_height)
    }

    /// Short digest of every parameter that changes what an artifact means:
    /// geometry, dimensions and evaluation settings. Segment lists are
    /// excluded so artifacts calibrated on one corpus apply to another
    /// recorded with the same detector and settings.
    pub fn fingerprint(&self) -> String {
        let canonical = format!(
            "laneperf-manifest-v1|w={}|h={}|d_lane={}|d_img={}|iou={:?}|stroke={:?}|cov={}",
            self.image_width,
            self.image_height,
            self.d_lane,
            self.d_img,
            self.iou_threshold,
            self.lane_stroke_width,
            self.covariance.as_str(),
        );
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Reads, parses and validates a manifest file.
pub fn parse_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::parse_str(&text, base)
}

fn schema_error_from_serde(err: &serde_json::Error) -> Error {
    let message = err.to_string();
    let field = message
        .split('`')
        .nth(1)
        .map(str::to_owned)
        .unwrap_or_else(|| "<document>".to_owned());
    Error::schema(field, message)
}
