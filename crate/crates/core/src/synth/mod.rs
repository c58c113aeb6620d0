//! Seeded synthetic corpora: ground-truth lane scenes plus a simulated
//! detector whose quality degrades with a domain-shift severity.
//!
//! Every frame gets a difficulty `δ = min(1, s + spread·u³)` with `s` the
//! segment's severity and `u` uniform, so even a clean source domain holds a
//! tail of hard frames. Detector rates grow linearly in `δ`:
//!
//! - lanes are dropped with probability `drop_base + drop_gain·δ`;
//! - kept lanes are shifted laterally by `N(0, σ)`, `σ = jitter_base + jitter_gain·δ`;
//! - each of two spurious-lane slots fires with probability `fp_base + fp_gain·δ`.
//!
//! Confidences fall with `δ` and with the lateral error, and are lower for
//! spurious lanes. Lane features and image embeddings drift along fixed
//! directions as `δ` grows.

mod corpus;
mod scene;

use serde::{Deserialize, Serialize};

use crate::data::Role;
use crate::error::{Error, Result};

pub use corpus::{generate_corpus, write_corpus, Corpus, GeneratedSegment};
pub use scene::render_frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryParams {
    /// Horizon height as a fraction of the image height.
    pub horizon: f64,
    /// Lane spacing at the bottom edge, in pixels.
    pub spacing: (f64, f64),
    /// How far lanes converge towards the vanishing point (0 = parallel).
    pub convergence: f64,
    /// Largest lateral bend at the far end, in pixels.
    pub max_bend: f64,
    pub points_per_lane: usize,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            horizon: 0.38,
            spacing: (60.0, 85.0),
            convergence: 0.8,
            max_bend: 25.0,
            points_per_lane: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    pub drop_base: f64,
    pub drop_gain: f64,
    /// Lateral error scale in pixels.
    pub jitter_base: f64,
    pub jitter_gain: f64,
    pub fp_base: f64,
    pub fp_gain: f64,
    pub confidence_tp: f64,
    pub confidence_fp: f64,
    /// Confidence lost per unit of difficulty.
    pub confidence_slope: f64,
    /// Confidence lost per stroke width of lateral error (saturating at 1).
    pub confidence_quality: f64,
    pub confidence_noise: f64,
    /// Sum of the lane and background logits.
    pub logit_margin: f64,
    /// Feature drift per unit of difficulty.
    pub feature_shift: f64,
    pub feature_noise: f64,
    /// Image-embedding drift per unit of difficulty.
    pub embedding_shift: f64,
    pub embedding_noise: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            drop_base: 0.02,
            drop_gain: 0.35,
            jitter_base: 1.0,
            jitter_gain: 6.0,
            fp_base: 0.03,
            fp_gain: 0.4,
            confidence_tp: 0.88,
            confidence_fp: 0.55,
            confidence_slope: 0.2,
            confidence_quality: 0.25,
            confidence_noise: 0.06,
            logit_margin: 1.0,
            feature_shift: 2.0,
            feature_noise: 0.5,
            embedding_shift: 1.5,
            embedding_noise: 0.3,
        }
    }
}

impl DetectorParams {
    /// A detector that reproduces the ground truth exactly.
    pub fn perfect() -> Self {
        DetectorParams {
            drop_base: 0.0,
            drop_gain: 0.0,
            jitter_base: 0.0,
            jitter_gain: 0.0,
            fp_base: 0.0,
            fp_gain: 0.0,
            ..DetectorParams::default()
        }
    }

    pub fn drop_probability(&self, difficulty: f64) -> f64 {
        (self.drop_base + self.drop_gain * difficulty).clamp(0.0, 1.0)
    }

    pub fn jitter_sigma(&self, difficulty: f64) -> f64 {
        self.jitter_base + self.jitter_gain * difficulty
    }

    pub fn fp_probability(&self, difficulty: f64) -> f64 {
        (self.fp_base + self.fp_gain * difficulty).clamp(0.0, 1.0)
    }
}

/// A named group of segments sharing one role and severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub role: Role,
    pub severity: f64,
    pub n_segments: usize,
    /// Leading frames of each segment with neither lanes nor predictions.
    #[serde(default)]
    pub no_lane_frames: usize,
}

impl FamilySpec {
    pub fn new(name: impl Into<String>, role: Role, severity: f64, n_segments: usize) -> Self {
        FamilySpec {
            name: name.into(),
            group: None,
            role,
            severity,
            n_segments,
            no_lane_frames: 0,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames_per_segment: usize,
    pub lanes_per_frame: (usize, usize),
    pub image_width: u32,
    pub image_height: u32,
    pub stroke_width: f64,
    pub minidataset_size: usize,
    pub d_lane: usize,
    pub d_img: usize,
    /// Upper spread of per-frame difficulty above the segment severity.
    pub difficulty_spread: f64,
    /// Per-segment severity offsets are uniform in `±segment_jitter`.
    pub segment_jitter: f64,
    pub geometry: GeometryParams,
    pub detector: DetectorParams,
    pub families: Vec<FamilySpec>,
    /// Render flat-color PNG frames next to the records.
    pub images: bool,
}

impl Default for SynthConfig {
    /// A clean source domain, four target families of growing severity and
    /// one target segment without any lanes.
    fn default() -> Self {
        let mut no_lane = FamilySpec::new("no-lane", Role::Target, 0.0, 1).with_group("empty");
        no_lane.no_lane_frames = usize::MAX;
        SynthConfig {
            seed: 0,
            frames_per_segment: 100,
            lanes_per_frame: (2, 4),
            image_width: 320,
            image_height: 192,
            stroke_width: 8.0,
            minidataset_size: 100,
            d_lane: 8,
            d_img: 8,
            difficulty_spread: 1.0,
            segment_jitter: 0.05,
            geometry: GeometryParams::default(),
            detector: DetectorParams::default(),
            families: vec![
                FamilySpec::new("source-train", Role::SourceTrainRef, 0.0, 10),
                FamilySpec::new("source-val", Role::SourceVal, 0.0, 20),
                FamilySpec::new("shift-0.2", Role::Target, 0.2, 10).with_group("mild"),
                FamilySpec::new("shift-0.4", Role::Target, 0.4, 10).with_group("mild"),
                FamilySpec::new("shift-0.6", Role::Target, 0.6, 10).with_group("severe"),
                FamilySpec::new("shift-0.8", Role::Target, 0.8, 10).with_group("severe"),
                no_lane,
            ],
            images: true,
        }
    }
}

impl SynthConfig {
    /// One family of `n_segments` at `severity`.
    pub fn single(role: Role, severity: f64, n_segments: usize) -> Self {
        SynthConfig {
            families: vec![FamilySpec::new(format!("s{severity}"), role, severity, n_segments)],
            images: false,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames_per_segment == 0 {
            return bad("frames_per_segment must be >= 1".into());
        }
        let (lo, hi) = self.lanes_per_frame;
        if lo == 0 || lo > hi {
            return bad(format!("lanes_per_frame ({lo}, {hi}) must satisfy 1 <= min <= max"));
        }
        if self.image_width < 16 || self.image_height < 16 {
            return bad("canvas must be at least 16x16".into());
        }
        if !(self.stroke_width >= 1.0) || self.d_lane == 0 || self.d_img == 0 || self.minidataset_size == 0 {
            return bad("stroke width, dimensions and mini-dataset size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.difficulty_spread) || !(0.0..=0.5).contains(&self.segment_jitter) {
            return bad("difficulty_spread must lie in [0, 1] and segment_jitter in [0, 0.5]".into());
        }
        let g = &self.geometry;
        if !(0.0..0.9).contains(&g.horizon)
            || !(0.0..=1.0).contains(&g.convergence)
            || g.points_per_lane < 2
            || !(g.spacing.0 > 0.0 && g.spacing.0 <= g.spacing.1)
        {
            return bad("invalid geometry parameters".into());
        }
        let d = &self.detector;
        for (name, v) in [
            ("drop_base", d.drop_base),
            ("fp_base", d.fp_base),
            ("confidence_tp", d.confidence_tp),
            ("confidence_fp", d.confidence_fp),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("drop_gain", d.drop_gain),
            ("jitter_base", d.jitter_base),
            ("jitter_gain", d.jitter_gain),
            ("fp_gain", d.fp_gain),
            ("confidence_slope", d.confidence_slope),
            ("confidence_quality", d.confidence_quality),
            ("confidence_noise", d.confidence_noise),
            ("feature_noise", d.feature_noise),
            ("embedding_noise", d.embedding_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be >= 0"));
            }
        }
        if self.families.is_empty() {
            return bad("no families".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for f in &self.families {
            if !names.insert(f.name.as_str()) {
                return bad(format!("duplicate family `{}`", f.name));
            }
            if !(0.0..=1.0).contains(&f.severity) {
                return bad(format!("family `{}` severity {} outside [0, 1]", f.name, f.severity));
            }
            if f.n_segments == 0 {
                return bad(format!("family `{}` has no segments", f.name));
            }
        }
        Ok(())
    }
}
