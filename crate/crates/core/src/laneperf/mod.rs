//! The LanePerf estimator: a permutation-invariant network over a frame's
//! predicted lanes fused with an image embedding, trained on labeled
//! validation frames to regress their F1.

mod embed;
mod gradcheck;
mod network;
mod train;
mod weights_file;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MiniDataset;
use crate::error::{Error, Result};

pub use embed::{embed_image, BuiltinEmbedder, ImageEmbedder, PrecomputedEmbedder, BUILTIN_DIM};
pub use gradcheck::{gradcheck, BlockError, GradcheckConfig, GradcheckReport};
pub use network::{
    forward_prepared, forward_sample, grouped_loss_and_gradients, loss_and_gradients, Architecture, Dense,
    Group, NetworkWeights, PreparedSample, BLOCK_NAMES,
};
pub use train::{init_weights, train, TrainOutcome};
pub use weights_file::{WeightsFile, WEIGHTS_FORMAT_VERSION};

/// What the network is regressed onto.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Each frame's own F1.
    #[default]
    PerSample,
    /// The mean prediction over a mini-dataset against its aggregate F1.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub h1: usize,
    pub h2: usize,
    pub h3: usize,
    pub weight_decay: f64,
    /// Frames per update (mini-datasets per update under [`Supervision::Dataset`]).
    pub batch_size: usize,
    pub supervision: Supervision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 50,
            seed: 0,
            h1: 128,
            h2: 64,
            h3: 128,
            weight_decay: 1e-5,
            batch_size: 32,
            supervision: Supervision::PerSample,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.h1 == 0 || self.h2 == 0 || self.h3 == 0 {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, d_lane: usize, d_img: usize) -> Architecture {
        Architecture {
            d_lane,
            d_img,
            h1: self.h1,
            h2: self.h2,
            h3: self.h3,
        }
    }
}

/// Mean predicted frame F1 over the mini-dataset. Outputs are sorted before
/// summing so the result does not depend on sample order.
pub fn laneperf_estimate(
    weights: &NetworkWeights,
    dataset: &MiniDataset,
    embedder: &dyn ImageEmbedder,
) -> Result<f64> {
    if dataset.samples.is_empty() {
        return Err(Error::Empty("mini-dataset"));
    }
    let mut outputs = dataset
        .samples
        .par_iter()
        .map(|s| forward_sample(weights, s, embedder))
        .collect::<Result<Vec<f64>>>()?;
    outputs.sort_by(f64::total_cmp);
    Ok(outputs.iter().sum::<f64>() / outputs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Lane, Role, Sample};

    fn sample(id: &str, lanes: usize) -> Sample {
        let lane = Lane::predicted(vec![[0.0, 0.0], [1.0, 9.0]], 0.7, None, vec![0.4, -0.1]);
        Sample {
            sample_id: id.into(),
            segment_id: "seg".into(),
            pred_lanes: vec![lane; lanes],
            gt_lanes: None,
            image_embedding: Some(vec![0.2, 0.5, -0.3]),
            image_ref: None,
        }
    }

    fn weights() -> NetworkWeights {
        let cfg = TrainConfig {
            h1: 6,
            h2: 5,
            h3: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        init_weights(&cfg, 2, 3).unwrap()
    }

    #[test]
    fn identical_samples_give_the_single_value() {
        let w = weights();
        let emb = PrecomputedEmbedder::new(3);
        let one = forward_sample(&w, &sample("a", 2), &emb).unwrap();
        let samples = (0..7).map(|k| sample(&k.to_string(), 2)).collect();
        let est = laneperf_estimate(&w, &MiniDataset::new("d", Role::Target, samples), &emb).unwrap();
        assert!((est - one).abs() < 1e-15);
    }

    #[test]
    fn zero_lane_dataset_is_not_forced_to_zero() {
        let w = weights();
        let emb = PrecomputedEmbedder::new(3);
        let samples = (0..5).map(|k| sample(&k.to_string(), 0)).collect();
        let est = laneperf_estimate(&w, &MiniDataset::new("d", Role::Target, samples), &emb).unwrap();
        assert!(est > 0.0 && est < 1.0);
    }

    #[test]
    fn empty_dataset_rejected() {
        let emb = PrecomputedEmbedder::new(3);
        assert!(laneperf_estimate(&weights(), &MiniDataset::new("d", Role::Target, vec![]), &emb).is_err());
    }
}
