//! Calibration of every estimator on labeled source data, estimator-quality
//! metrics and the benchmark runner.

mod metrics;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Manifest, MiniDataset};
use crate::error::{Error, Result};
use crate::estimators::{
    ac_estimate, atc_estimate, atc_fit, doc_calibrate, doc_estimate, ebm_calibrate, ebm_estimate, fid_calibrate,
    fid_estimate, CalibrationArtifact, LabeledSet,
};
use crate::eval::dataset_f1;
use crate::laneperf::{laneperf_estimate, train, ImageEmbedder, NetworkWeights, TrainConfig};

pub use metrics::{average_ranks, mae, spearman_rho, Spearman};
pub use report::{run_benchmark, EvalReport, MethodAggregate, MethodFailure, ReportRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "laneperf")]
    LanePerf,
    Ac,
    Doc,
    Atc,
    Fid,
    Ebm,
}

impl Method {
    /// Report order.
    pub const ALL: [Method; 6] = [
        Method::LanePerf,
        Method::Ac,
        Method::Doc,
        Method::Atc,
        Method::Fid,
        Method::Ebm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::LanePerf => "laneperf",
            Method::Ac => "ac",
            Method::Doc => "doc",
            Method::Atc => "atc",
            Method::Fid => "fid",
            Method::Ebm => "ebm",
        }
    }

    /// Column heading in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::LanePerf => "LanePerf",
            Method::Ac => "AC",
            Method::Doc => "DOC",
            Method::Atc => "ATC",
            Method::Fid => "FID",
            Method::Ebm => "EBM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected one of laneperf, ac, doc, atc, fid, ebm)")))
    }
}

/// What calibration produced for one method.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    /// The method needs no calibration.
    Free,
    Artifact(CalibrationArtifact),
    Network(NetworkWeights),
}

/// Maps a mini-dataset to an estimated F1.
pub trait Estimator: Sync {
    fn name(&self) -> &str;
    fn estimate(&self, dataset: &MiniDataset) -> Result<f64>;
}

/// One of the built-in methods with its fitted parameters.
pub struct MethodEstimator<'a> {
    pub method: Method,
    pub fitted: &'a Fitted,
    pub embedder: &'a dyn ImageEmbedder,
}

impl Estimator for MethodEstimator<'_> {
    fn name(&self) -> &str {
        self.method.as_str()
    }

    fn estimate(&self, dataset: &MiniDataset) -> Result<f64> {
        match (self.method, self.fitted) {
            (Method::Ac, _) => ac_estimate(dataset),
            (Method::Doc, Fitted::Artifact(a)) => doc_estimate(dataset, a),
            (Method::Atc, Fitted::Artifact(a)) => atc_estimate(dataset, a),
            (Method::Fid, Fitted::Artifact(a)) => fid_estimate(dataset, a),
            (Method::Ebm, Fitted::Artifact(a)) => ebm_estimate(dataset, a),
            (Method::LanePerf, Fitted::Network(w)) => laneperf_estimate(w, dataset, self.embedder),
            (m, _) => Err(Error::Consistency(format!("no usable calibration for `{m}`"))),
        }
    }
}

/// Stands in for a method that could not be set up; every estimate fails
/// with the recorded message.
pub struct FailedEstimator {
    pub name: String,
    pub message: String,
}

impl Estimator for FailedEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, _: &MiniDataset) -> Result<f64> {
        Err(Error::Consistency(self.message.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub fitted: BTreeMap<Method, Fitted>,
    pub failures: BTreeMap<Method, String>,
    pub training: Option<TrainingSummary>,
}

impl Calibration {
    /// Estimators for `methods` in the given order; methods that failed to
    /// calibrate become [`FailedEstimator`]s.
    pub fn estimators<'a>(&'a self, methods: &[Method], embedder: &'a dyn ImageEmbedder) -> Vec<Box<dyn Estimator + 'a>> {
        methods
            .iter()
            .map(|&method| -> Box<dyn Estimator + 'a> {
                match self.fitted.get(&method) {
                    Some(fitted) => Box::new(MethodEstimator {
                        method,
                        fitted,
                        embedder,
                    }),
                    None => Box::new(FailedEstimator {
                        name: method.as_str().into(),
                        message: self
                            .failures
                            .get(&method)
                            .cloned()
                            .unwrap_or_else(|| format!("`{method}` was not calibrated")),
                    }),
                }
            })
            .collect()
    }
}

fn describe(fitted: &Fitted) -> String {
    match fitted {
        Fitted::Free => "no parameters".into(),
        Fitted::Artifact(CalibrationArtifact::Doc { offset }) => format!("offset {offset:.6}"),
        Fitted::Artifact(CalibrationArtifact::Atc { threshold }) => format!("threshold {threshold:.6}"),
        Fitted::Artifact(CalibrationArtifact::Fid { reference, regression, .. }) => format!(
            "reference n={} d={}, F1 = {:.6} + {:.6}·distance",
            reference.n,
            reference.dim(),
            regression.intercept,
            regression.slope
        ),
        Fitted::Artifact(CalibrationArtifact::Ebm { temperature, regression }) => format!(
            "T = {temperature:.4}, F1 = {:.6} + {:.6}·energy",
            regression.intercept, regression.slope
        ),
        Fitted::Network(w) => format!("{} parameters", w.parameter_count()),
    }
}

/// Fits every requested method on the labeled validation mini-datasets.
/// Failures are collected per method; only unusable validation data (for
/// example missing ground truth) aborts the whole run.
pub fn calibrate_all(
    val_sets: &[MiniDataset],
    reference_features: &[&[f64]],
    manifest: &Manifest,
    embedder: &dyn ImageEmbedder,
    methods: &[Method],
    train_config: &TrainConfig,
) -> Result<Calibration> {
    if val_sets.is_empty() {
        return Err(Error::Empty("validation mini-datasets"));
    }
    let f1 = val_sets
        .par_iter()
        .map(|d| dataset_f1(d, manifest).map(|s| s.f1))
        .collect::<Result<Vec<f64>>>()?;
    let labeled: Vec<LabeledSet<'_>> = val_sets.iter().zip(&f1).map(|(d, &f)| LabeledSet::new(d, f)).collect();

    let results: Vec<(Method, Result<(Fitted, Option<TrainingSummary>)>)> = methods
        .par_iter()
        .map(|&method| {
            let artifact = |r: Result<CalibrationArtifact>| r.map(|a| (Fitted::Artifact(a), None));
            let fitted = match method {
                Method::Ac => Ok((Fitted::Free, None)),
                Method::Doc => artifact(doc_calibrate(&labeled)),
                Method::Atc => artifact(atc_fit(&labeled)),
                Method::Fid => artifact(fid_calibrate(
                    reference_features.iter().copied(),
                    &labeled,
                    manifest.covariance,
                )),
                Method::Ebm => artifact(ebm_calibrate(&labeled)),
                Method::LanePerf => train(val_sets, manifest, embedder, train_config).map(|o| {
                    let summary = TrainingSummary {
                        samples: o.samples,
                        initial_loss: o.initial_loss,
                        final_loss: o.final_loss,
                        epoch_losses: o.epoch_losses,
                    };
                    (Fitted::Network(o.weights), Some(summary))
                }),
            };
            (method, fitted)
        })
        .collect();

    let mut calibration = Calibration {
        fitted: BTreeMap::new(),
        failures: BTreeMap::new(),
        training: None,
    };
    for (method, result) in results {
        match result {
            Ok((fitted, summary)) => {
                log::info!("calibrated {method}: {}", describe(&fitted));
                if summary.is_some() {
                    calibration.training = summary;
                }
                calibration.fitted.insert(method, fitted);
            }
            Err(e) => {
                log::warn!("calibration of {method} failed: {e}");
                calibration.failures.insert(method, e.to_string());
            }
        }
    }
    Ok(calibration)
}
