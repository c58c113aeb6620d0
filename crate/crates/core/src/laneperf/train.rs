use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::embed::ImageEmbedder;
use super::network::{grouped_loss_and_gradients, Group, NetworkWeights, PreparedSample};
use super::{Supervision, TrainConfig};
use crate::data::{Manifest, MiniDataset};
use crate::error::{Error, Result};
use crate::eval::{dataset_f1_with, f1_from_counts, sample_counts, EvalParams};

/// Weights drawn from the config's seed.
pub fn init_weights(config: &TrainConfig, d_lane: usize, d_img: usize) -> Result<NetworkWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(NetworkWeights::init(config.architecture(d_lane, d_img), &mut rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    /// Full-data loss before the first update.
    pub initial_loss: f64,
    /// Mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Full-data loss of the returned weights.
    pub final_loss: f64,
    pub samples: usize,
}

struct TrainingItem {
    samples: Vec<PreparedSample>,
    target: f64,
}

fn training_items(
    val_sets: &[MiniDataset],
    params: &EvalParams,
    embedder: &dyn ImageEmbedder,
    weights: &NetworkWeights,
    supervision: Supervision,
) -> Result<Vec<TrainingItem>> {
    let arch = weights.architecture();
    let prepare = |s| PreparedSample::from_sample(s, embedder, &arch);
    match supervision {
        Supervision::PerSample => val_sets
            .iter()
            .flat_map(|d| &d.samples)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|s| {
                Ok(TrainingItem {
                    target: f1_from_counts(sample_counts(s, params)?).f1,
                    samples: vec![prepare(s)?],
                })
            })
            .collect(),
        Supervision::Dataset => val_sets
            .par_iter()
            .filter(|d| !d.samples.is_empty())
            .map(|d| {
                Ok(TrainingItem {
                    target: dataset_f1_with(d, params)?.f1,
                    samples: d.samples.iter().map(prepare).collect::<Result<_>>()?,
                })
            })
            .collect(),
    }
}

fn groups<'a>(items: &'a [TrainingItem], order: &[usize]) -> Vec<Group<'a>> {
    order
        .iter()
        .map(|&k| Group {
            samples: items[k].samples.iter().collect(),
            target: items[k].target,
        })
        .collect()
}

/// Momentum gradient descent on labeled validation mini-datasets. The seed
/// fixes the initial weights and the batch order, so repeated runs return
/// bit-identical weights.
pub fn train(
    val_sets: &[MiniDataset],
    manifest: &Manifest,
    embedder: &dyn ImageEmbedder,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arch = config.architecture(manifest.d_lane, embedder.dim());
    let mut weights = NetworkWeights::init(arch, &mut rng);
    let params = EvalParams::from(manifest);
    let items = training_items(val_sets, &params, embedder, &weights, config.supervision)?;
    if items.is_empty() {
        return Err(Error::Insufficient("no labeled samples to train on".into()));
    }
    let samples = items.iter().map(|i| i.samples.len()).sum();
    let all: Vec<usize> = (0..items.len()).collect();
    let full_loss =
        |w: &NetworkWeights| grouped_loss_and_gradients(w, &groups(&items, &all), config.weight_decay).map(|r| r.0);

    let initial_loss = full_loss(&weights)?;
    let mut velocity = weights.zeros_like();
    let mut order = all.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = grouped_loss_and_gradients(&weights, &groups(&items, batch), config.weight_decay)?;
            for ((w, v), g) in weights
                .blocks_mut()
                .into_iter()
                .zip(velocity.blocks_mut())
                .zip(grad.blocks())
            {
                for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = config.momentum * *v - config.learning_rate * g;
                    *w += *v;
                }
            }
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("epoch {epoch}: mean batch loss {mean:.6}");
        epoch_losses.push(mean);
    }
    if weights.validate().is_err() {
        return Err(Error::Consistency("training diverged to non-finite weights".into()));
    }
    let final_loss = full_loss(&weights)?;
    log::info!(
        "trained on {samples} samples ({} groups): loss {initial_loss:.6} -> {final_loss:.6}",
        items.len()
    );
    Ok(TrainOutcome {
        weights,
        initial_loss,
        epoch_losses,
        final_loss,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Lane, Role, Sample};
    use crate::laneperf::{forward_sample, PrecomputedEmbedder};
    use rand::Rng;

    fn lane(x: f64, conf: f64, feature: Vec<f64>) -> Lane {
        Lane::predicted(vec![[x, 0.0], [x, 40.0]], conf, Some([conf, 0.0]), feature)
    }

    /// 40 frames: each has one gt lane, and either a matching prediction
    /// (feature near +1) or a misplaced one (feature near -1).
    fn synthetic_set(seed: u64) -> MiniDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..40)
            .map(|k| {
                let good = k % 2 == 0;
                let sign = if good { 1.0 } else { -1.0 };
                let f = vec![sign + 0.1 * rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let x = if good { 20.0 } else { 70.0 };
                Sample {
                    sample_id: format!("f{k}"),
                    segment_id: "seg".into(),
                    pred_lanes: vec![lane(x, 0.5, f)],
                    gt_lanes: Some(vec![Lane::ground_truth(vec![[20.0, 0.0], [20.0, 40.0]])]),
                    image_embedding: Some(vec![rng.random_range(-1.0..1.0)]),
                    image_ref: None,
                }
            })
            .collect();
        MiniDataset::new("val", Role::SourceVal, samples)
    }

    fn manifest() -> Manifest {
        let mut m = Manifest::new(100, 40, 2, 1);
        m.lane_stroke_width = 6.0;
        m
    }

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            h1: 16,
            h2: 8,
            h3: 16,
            learning_rate: 0.05,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decreases_and_is_deterministic() {
        let data = [synthetic_set(1)];
        let emb = PrecomputedEmbedder::new(1);
        let a = train(&data, &manifest(), &emb, &small_config(3)).unwrap();
        assert_eq!(a.epoch_losses.len(), 50);
        assert_eq!(a.samples, 40);
        assert!(a.final_loss < a.initial_loss, "{} -> {}", a.initial_loss, a.final_loss);
        let b = train(&data, &manifest(), &emb, &small_config(3)).unwrap();
        assert_eq!(a, b);
        let c = train(&data, &manifest(), &emb, &small_config(4)).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn learns_to_separate_good_and_bad_frames() {
        let data = [synthetic_set(2)];
        let emb = PrecomputedEmbedder::new(1);
        let out = train(&data, &manifest(), &emb, &small_config(5)).unwrap();
        let ds = &data[0];
        let good = forward_sample(&out.weights, &ds.samples[0], &emb).unwrap();
        let bad = forward_sample(&out.weights, &ds.samples[1], &emb).unwrap();
        assert!(good > 0.8 && bad < 0.2, "good {good}, bad {bad}");
    }

    #[test]
    fn constant_targets_converge_to_half() {
        // Two gt lanes, one hit and one miss: every frame scores exactly 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = (0..40)
            .map(|k| Sample {
                sample_id: format!("f{k}"),
                segment_id: "seg".into(),
                pred_lanes: vec![
                    lane(20.0, 0.9, vec![rng.random_range(-1.0..1.0), 0.5]),
                    lane(80.0, 0.4, vec![rng.random_range(-1.0..1.0), -0.5]),
                ],
                gt_lanes: Some(vec![
                    Lane::ground_truth(vec![[20.0, 0.0], [20.0, 40.0]]),
                    Lane::ground_truth(vec![[50.0, 0.0], [50.0, 40.0]]),
                ]),
                image_embedding: Some(vec![rng.random_range(-1.0..1.0)]),
                image_ref: None,
            })
            .collect();
        let ds = MiniDataset::new("val", Role::SourceVal, samples);
        assert!(ds
            .samples
            .iter()
            .all(|s| crate::eval::per_sample_f1(s, &manifest()).unwrap() == 0.5));
        let emb = PrecomputedEmbedder::new(1);
        let out = train(std::slice::from_ref(&ds), &manifest(), &emb, &small_config(6)).unwrap();
        let mean = ds
            .samples
            .iter()
            .map(|s| forward_sample(&out.weights, s, &emb).unwrap())
            .sum::<f64>()
            / ds.samples.len() as f64;
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn dataset_supervision_trains() {
        let mut sets: Vec<MiniDataset> = synthetic_set(7).chunk(10).unwrap();
        sets.extend(synthetic_set(8).chunk(10).unwrap());
        let emb = PrecomputedEmbedder::new(1);
        let cfg = TrainConfig {
            supervision: Supervision::Dataset,
            batch_size: 2,
            ..small_config(9)
        };
        let out = train(&sets, &manifest(), &emb, &cfg).unwrap();
        assert_eq!(out.samples, 80);
        assert!(out.final_loss < out.initial_loss);
    }

    #[test]
    fn errors() {
        let emb = PrecomputedEmbedder::new(1);
        assert!(matches!(
            train(&[], &manifest(), &emb, &small_config(0)),
            Err(Error::Insufficient(_))
        ));
        let mut unlabeled = synthetic_set(1);
        unlabeled.samples[3].gt_lanes = None;
        assert!(matches!(
            train(&[unlabeled], &manifest(), &emb, &small_config(0)),
            Err(Error::MissingGroundTruth(_))
        ));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&[synthetic_set(1)], &manifest(), &emb, &bad).is_err());
        assert!(init_weights(&TrainConfig { epochs: 0, ..TrainConfig::default() }, 2, 1).is_err());
    }

    #[test]
    fn init_weights_is_seeded() {
        let a = init_weights(&TrainConfig::default(), 4, 3).unwrap();
        assert_eq!(a, init_weights(&TrainConfig::default(), 4, 3).unwrap());
        let other = TrainConfig {
            seed: 1,
            ..TrainConfig::default()
        };
        assert_ne!(a, init_weights(&other, 4, 3).unwrap());
        assert_eq!(a.architecture().h1, 128);
    }
}
