//! Label-free performance estimation for lane detectors.
//!
//! Given a lane detector's outputs on an unlabeled target domain, estimate
//! its F1 score per mini-dataset (a run of consecutive frames). The crate
//! provides:
//!
//! - [`data`]: lanes, samples, mini-datasets, the manifest and record files.
//! - [`eval`]: ground-truth F1 with thick-line IoU and optimal lane matching.
//! - [`estimators`]: confidence, threshold, Fréchet-distance and energy
//!   baselines together with their calibration.
//! - [`laneperf`]: a set-regression network over lane features and an image
//!   embedding, with a learnable placeholder for frames without lanes.
//! - [`harness`]: calibration of every method, MAE / Spearman metrics and
//!   benchmark reports.
//! - [`synth`]: a seeded corpus generator with controllable domain shift.

pub mod data;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod harness;
pub mod io;
pub mod laneperf;
pub mod synth;

pub use data::{Lane, Manifest, MiniDataset, Role, Sample};
pub use error::{Error, Result};
