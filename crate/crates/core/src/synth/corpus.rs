use std::io::Cursor;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::scene::{render_frame, simulate_frame, Directions};
use super::{FamilySpec, SynthConfig};
use crate::data::{chunk_minidatasets, write_segment, Manifest, MiniDataset, Role, Sample, SegmentEntry};
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSegment {
    pub entry: SegmentEntry,
    /// Family severity plus this segment's offset.
    pub severity: f64,
    /// Per-frame difficulty, aligned with `samples`.
    pub difficulty: Vec<f64>,
    pub samples: Vec<Sample>,
}

impl GeneratedSegment {
    pub fn dataset(&self) -> MiniDataset {
        MiniDataset {
            dataset_id: self.entry.id.clone(),
            role: self.entry.role,
            family: self.entry.family.clone(),
            group: self.entry.group.clone(),
            samples: self.samples.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: SynthConfig,
    pub manifest: Manifest,
    pub segments: Vec<GeneratedSegment>,
}

impl Corpus {
    /// Whole segments with `role`, in generation order.
    pub fn datasets(&self, role: Role) -> Vec<MiniDataset> {
        self.segments
            .iter()
            .filter(|s| s.entry.role == role)
            .map(GeneratedSegment::dataset)
            .collect()
    }

    /// Segments with `role` chunked at the manifest's mini-dataset size.
    pub fn minidatasets(&self, role: Role) -> Result<Vec<MiniDataset>> {
        chunk_minidatasets(&self.datasets(role), self.manifest.minidataset_size)
    }

    /// Lane features of the reference segments.
    pub fn reference_features(&self) -> impl Iterator<Item = &[f64]> {
        self.segments
            .iter()
            .filter(|s| s.entry.role == Role::SourceTrainRef)
            .flat_map(|s| s.samples.iter())
            .flat_map(|s| s.pred_lanes.iter())
            .filter_map(|l| l.feature.as_deref())
    }
}

fn segment_rng(seed: u64, family: usize, segment: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((family as u64) << 32) | segment as u64);
    rng
}

fn generate_segment(
    cfg: &SynthConfig,
    dirs: &Directions,
    family_index: usize,
    family: &FamilySpec,
    k: usize,
) -> GeneratedSegment {
    let mut rng = segment_rng(cfg.seed, family_index, k);
    let offset = if cfg.segment_jitter > 0.0 {
        rng.random_range(-cfg.segment_jitter..=cfg.segment_jitter)
    } else {
        0.0
    };
    let severity = (family.severity + offset).clamp(0.0, 1.0);
    let id = format!("{}-{k:02}", family.name);
    let mut difficulty = Vec::with_capacity(cfg.frames_per_segment);
    let mut samples = Vec::with_capacity(cfg.frames_per_segment);
    for frame in 0..cfg.frames_per_segment {
        let u: f64 = rng.random();
        let delta = (severity + cfg.difficulty_spread * u * u * u).min(1.0);
        let (gts, preds, embedding) = simulate_frame(cfg, dirs, &mut rng, delta, frame < family.no_lane_frames);
        difficulty.push(delta);
        samples.push(Sample {
            sample_id: format!("{id}/{frame:04}"),
            segment_id: id.clone(),
            pred_lanes: preds,
            gt_lanes: Some(gts),
            image_embedding: Some(embedding),
            image_ref: cfg.images.then(|| format!("images/{id}/{frame:04}.png")),
        });
    }
    GeneratedSegment {
        entry: SegmentEntry {
            path: PathBuf::from(format!("segments/{id}.jsonl")),
            id,
            role: family.role,
            family: Some(family.name.clone()),
            group: family.group.clone(),
            d_lane: None,
            d_img: None,
        },
        severity,
        difficulty,
        samples,
    }
}

/// Generates every family's segments. Each segment draws from its own
/// stream of the master seed, so the output does not depend on scheduling.
pub fn generate_corpus(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let dirs = Directions::new(config.d_lane, config.d_img);
    let jobs: Vec<(usize, &FamilySpec, usize)> = config
        .families
        .iter()
        .enumerate()
        .flat_map(|(i, f)| (0..f.n_segments).map(move |k| (i, f, k)))
        .collect();
    let segments: Vec<GeneratedSegment> = jobs
        .par_iter()
        .map(|&(i, f, k)| generate_segment(config, &dirs, i, f, k))
        .collect();
    let mut manifest = Manifest::new(config.image_width, config.image_height, config.d_lane, config.d_img);
    manifest.lane_stroke_width = config.stroke_width;
    manifest.minidataset_size = config.minidataset_size;
    manifest.segments = segments.iter().map(|s| s.entry.clone()).collect();
    manifest.validate()?;
    Ok(Corpus {
        config: config.clone(),
        manifest,
        segments,
    })
}

/// Writes `manifest.json`, one record file per segment, the generator
/// config and, when enabled, the rendered frames. Returns the manifest path.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    corpus.segments.par_iter().try_for_each(|seg| {
        write_segment(&dir.join(&seg.entry.path), &seg.samples)?;
        for (sample, &delta) in seg.samples.iter().zip(&seg.difficulty) {
            let Some(r) = &sample.image_ref else { continue };
            let path = dir.join(r);
            let mut png = Vec::new();
            render_frame(sample, delta, &corpus.config)
                .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
                .map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            write_atomic(&path, &png)?;
        }
        Ok::<_, Error>(())
    })?;
    let config = serde_json::to_string_pretty(&corpus.config)? + "\n";
    write_atomic(&dir.join("synth_config.json"), config.as_bytes())?;
    let path = dir.join("manifest.json");
    write_atomic(&path, corpus.manifest.to_json().as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_manifest;
    use crate::estimators::{frechet_distance, gaussian_stats};
    use crate::eval::{dataset_f1, match_lanes};
    use crate::data::CovarianceNorm;
    use crate::laneperf::{BuiltinEmbedder, ImageEmbedder};
    use crate::synth::DetectorParams;

    fn small(severity: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            frames_per_segment: 40,
            ..SynthConfig::single(Role::Target, severity, 3)
        }
    }

    #[test]
    fn perfect_detector_matches_ground_truth() {
        let cfg = SynthConfig {
            detector: DetectorParams::perfect(),
            ..small(0.0, 1)
        };
        let corpus = generate_corpus(&cfg).unwrap();
        for ds in corpus.datasets(Role::Target) {
            for s in &ds.samples {
                let gt = s.gt_lanes.as_ref().unwrap();
                assert_eq!(s.pred_lanes.len(), gt.len());
            }
            assert_eq!(dataset_f1(&ds, &corpus.manifest).unwrap().f1, 1.0);
        }
    }

    #[test]
    fn same_seed_same_files() {
        let cfg = SynthConfig {
            images: true,
            frames_per_segment: 5,
            ..small(0.5, 7)
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_corpus(&generate_corpus(&cfg).unwrap(), a.path()).unwrap();
        write_corpus(&generate_corpus(&cfg).unwrap(), b.path()).unwrap();
        let mut files = 0;
        for entry in walk(a.path()) {
            let rel = entry.strip_prefix(a.path()).unwrap();
            assert_eq!(std::fs::read(&entry).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
            files += 1;
        }
        assert_eq!(files, 3 + 3 * 5 + 2);

        let other = generate_corpus(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(other.segments, generate_corpus(&small(0.5, 7)).unwrap().segments);
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn written_corpus_loads_back() {
        let cfg = SynthConfig {
            images: true,
            frames_per_segment: 6,
            ..small(0.3, 2)
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus(&corpus, dir.path()).unwrap();
        let manifest = parse_manifest(&path).unwrap();
        assert_eq!(manifest.fingerprint(), corpus.manifest.fingerprint());
        let loaded = manifest.load_all().unwrap();
        assert_eq!(loaded, corpus.datasets(Role::Target));

        let emb = BuiltinEmbedder::new(dir.path());
        let s = &loaded[0].samples[0];
        assert_eq!(emb.embed(s).unwrap().len(), emb.dim());
    }

    #[test]
    fn severity_lowers_f1() {
        let mean_f1 = |s: f64| {
            (0..10u64)
                .map(|seed| {
                    let c = generate_corpus(&small(s, seed)).unwrap();
                    c.datasets(Role::Target)
                        .iter()
                        .map(|d| dataset_f1(d, &c.manifest).unwrap().f1)
                        .sum::<f64>()
                        / 3.0
                })
                .sum::<f64>()
                / 10.0
        };
        let f1: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].into_iter().map(mean_f1).collect();
        assert!(f1.windows(2).all(|w| w[0] > w[1]), "{f1:?}");
    }

    #[test]
    fn matched_lanes_are_more_confident() {
        for s in [0.0, 0.5, 1.0] {
            let c = generate_corpus(&small(s, 3)).unwrap();
            let (mut tp, mut fp) = (Vec::new(), Vec::new());
            for seg in &c.segments {
                for sample in &seg.samples {
                    let m = match_lanes(&sample.pred_lanes, sample.gt().unwrap(), &c.manifest).unwrap();
                    for (i, lane) in sample.pred_lanes.iter().enumerate() {
                        let matched = m.matched_pairs.iter().any(|&(p, _, _)| p == i);
                        if matched { &mut tp } else { &mut fp }.push(lane.confidence.unwrap());
                    }
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!(!tp.is_empty() && !fp.is_empty());
            assert!(mean(&tp) > mean(&fp), "severity {s}: {} vs {}", mean(&tp), mean(&fp));
        }
    }

    #[test]
    fn feature_shift_grows_with_severity() {
        let stats = |s: f64| {
            let c = generate_corpus(&small(s, 4)).unwrap();
            let all: Vec<&[f64]> = c
                .segments
                .iter()
                .flat_map(|seg| seg.samples.iter().flat_map(|x| x.pred_lanes.iter()))
                .map(|l| l.feature.as_deref().unwrap())
                .collect();
            gaussian_stats(all, CovarianceNorm::Population).unwrap()
        };
        let base = stats(0.0);
        let d: Vec<f64> = [0.25, 0.5, 0.75, 1.0]
            .into_iter()
            .map(|s| frechet_distance(&base, &stats(s)).unwrap())
            .collect();
        assert!(d.windows(2).all(|w| w[0] < w[1]), "{d:?}");
    }

    #[test]
    fn no_lane_frames_are_empty() {
        let mut cfg = small(0.5, 5);
        cfg.families[0].no_lane_frames = 10;
        let c = generate_corpus(&cfg).unwrap();
        for seg in &c.segments {
            for (k, s) in seg.samples.iter().enumerate() {
                let empty = s.pred_lanes.is_empty() && s.gt().unwrap().is_empty();
                if k < 10 {
                    assert!(empty);
                }
            }
        }
    }

    #[test]
    fn records_satisfy_logit_consistency() {
        let c = generate_corpus(&small(0.9, 6)).unwrap();
        for seg in &c.segments {
            for s in &seg.samples {
                for lane in &s.pred_lanes {
                    lane.validate_predicted(c.manifest.d_lane).unwrap();
                }
            }
        }
    }
}
