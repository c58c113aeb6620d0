use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{Manifest, MiniDataset, Role, Sample, SegmentEntry};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Parses and validates one record line against the manifest.
pub fn parse_record(line: &str, manifest: &Manifest) -> Result<Sample> {
    let sample: Sample = serde_json::from_str(line)?;
    validate_sample(&sample, manifest)?;
    Ok(sample)
}

/// Serializes one sample as a single record line (no trailing newline).
pub fn record_line(sample: &Sample) -> String {
    serde_json::to_string(sample).expect("sample serializes")
}

fn validate_sample(sample: &Sample, manifest: &Manifest) -> Result<()> {
    for lane in &sample.pred_lanes {
        lane.validate_predicted(manifest.d_lane)?;
    }
    if let Some(gt) = &sample.gt_lanes {
        for lane in gt {
            lane.validate_points("gt_lanes[]")?;
        }
    }
    if let Some(embedding) = &sample.image_embedding {
        if embedding.len() != manifest.d_img {
            return Err(Error::dimension("image embedding", manifest.d_img, embedding.len()));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("image_embedding", "non-finite value"));
        }
    }
    Ok(())
}

/// Streams a record file, validating every sample. Blank lines are skipped.
pub fn read_records(path: &Path, manifest: &Manifest) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?;
        validate_sample(&sample, manifest).map_err(|e| Error::AtLine {
            path: path.to_path_buf(),
            line: k + 1,
            source: Box::new(e),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Loads one declared segment as a mini-dataset (before chunking).
pub fn load_segment(entry: &SegmentEntry, manifest: &Manifest) -> Result<MiniDataset> {
    let path = manifest.segment_path(entry);
    let samples = read_records(&path, manifest)?;
    if samples.is_empty() {
        return Err(Error::Insufficient(format!(
            "segment `{}` ({}) holds no records",
            entry.id,
            path.display()
        )));
    }
    if entry.role == Role::SourceVal {
        if let Some(s) = samples.iter().find(|s| !s.is_labeled()) {
            return Err(Error::MissingGroundTruth(format!(
                "validation segment `{}` sample `{}`",
                entry.id, s.sample_id
            )));
        }
    }
    Ok(MiniDataset {
        dataset_id: entry.id.clone(),
        role: entry.role,
        family: entry.family.clone(),
        group: entry.group.clone(),
        samples,
    })
}

/// Writes samples as a record file, one line per sample.
pub fn write_segment(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut text = String::new();
    for sample in samples {
        text.push_str(&record_line(sample));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

impl Manifest {
    /// Loads every declared segment, in manifest order. Distinct segments
    /// are read in parallel.
    pub fn load_all(&self) -> Result<Vec<MiniDataset>> {
        use rayon::prelude::*;
        self.segments
            .par_iter()
            .map(|entry| load_segment(entry, self))
            .collect()
    }

    /// Loads the segments with `role` and chunks them into mini-datasets.
    pub fn load_minidatasets(&self, role: Role, size: usize) -> Result<Vec<MiniDataset>> {
        use rayon::prelude::*;
        let segments: Vec<MiniDataset> = self
            .segments_with_role(role)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|entry| load_segment(entry, self))
            .collect::<Result<_>>()?;
        super::chunk_minidatasets(&segments, size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{lane_probability, Lane};

    fn manifest(dir: &Path) -> Manifest {
        let mut m = Manifest::new(64, 48, 2, 3);
        m.base_dir = dir.to_path_buf();
        m
    }

    fn pred(conf_logit: f64) -> Lane {
        let logits = [conf_logit, 0.0];
        Lane::predicted(
            vec![[1.0, 2.0], [3.0, 40.0]],
            lane_probability(logits),
            Some(logits),
            vec![0.1, -0.2],
        )
    }

    fn sample(id: &str, preds: Vec<Lane>) -> Sample {
        Sample {
            sample_id: id.into(),
            segment_id: "seg".into(),
            pred_lanes: preds,
            gt_lanes: Some(vec![Lane::ground_truth(vec![[1.0, 2.0], [3.0, 40.0]])]),
            image_embedding: Some(vec![0.5, 0.25, 1.0 / 3.0]),
            image_ref: None,
        }
    }

    #[test]
    fn three_records_one_zero_lane() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        let samples = vec![
            sample("0", vec![pred(0.3)]),
            sample("1", vec![]),
            sample("2", vec![pred(-1.1), pred(2.0)]),
        ];
        let path = dir.path().join("seg.jsonl");
        write_segment(&path, &samples).unwrap();
        let loaded = read_records(&path, &m).unwrap();
        assert_eq!(loaded.len(), 3);
        assert!(loaded[1].pred_lanes.is_empty());
        assert_eq!(loaded, samples);
    }

    #[test]
    fn feature_dimension_mismatch_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        let mut bad = pred(0.0);
        bad.feature = Some(vec![1.0, 2.0, 3.0]);
        let path = dir.path().join("seg.jsonl");
        write_segment(&path, &[sample("0", vec![pred(0.0)]), sample("1", vec![bad])]).unwrap();
        let err = read_records(&path, &m).unwrap_err();
        assert!(matches!(err, Error::AtLine { line: 2, .. }), "{err}");
        assert!(matches!(err.root(), Error::Dimension { expected: 2, actual: 3, .. }));
    }

    #[test]
    fn confidence_inconsistent_with_logits() {
        let m = manifest(Path::new(""));
        let mut lane = pred(0.7);
        let recomputed = lane_probability(lane.logits.unwrap());
        lane.confidence = Some(recomputed + 1.5e-6);
        let line = record_line(&sample("0", vec![lane.clone()]));
        assert!(matches!(parse_record(&line, &m), Err(Error::Consistency(_))));

        lane.confidence = Some(recomputed + 0.5e-6);
        let line = record_line(&sample("0", vec![lane]));
        parse_record(&line, &m).unwrap();
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        let path = dir.path().join("seg.jsonl");
        let good = record_line(&sample("0", vec![]));
        std::fs::write(&path, format!("{good}\n{{\"sample_id\": 3\n")).unwrap();
        assert!(matches!(
            read_records(&path, &m),
            Err(Error::Record { line: 2, .. })
        ));
    }

    #[test]
    fn predicted_lane_without_feature_rejected() {
        let m = manifest(Path::new(""));
        let mut lane = pred(0.0);
        lane.feature = None;
        let line = record_line(&sample("0", vec![lane]));
        assert!(matches!(parse_record(&line, &m), Err(Error::Schema { .. })));
    }

    #[test]
    fn validation_segment_requires_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(dir.path());
        let mut unlabeled = sample("1", vec![]);
        unlabeled.gt_lanes = None;
        write_segment(&dir.path().join("v.jsonl"), &[sample("0", vec![]), unlabeled]).unwrap();
        m.segments.push(SegmentEntry {
            id: "v".into(),
            path: "v.jsonl".into(),
            role: Role::SourceVal,
            family: None,
            group: None,
            d_lane: None,
            d_img: None,
        });
        assert!(matches!(
            load_segment(&m.segments[0], &m),
            Err(Error::MissingGroundTruth(_))
        ));
        m.segments[0].role = Role::Target;
        assert_eq!(load_segment(&m.segments[0], &m).unwrap().samples.len(), 2);
    }
}
