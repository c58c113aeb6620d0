//! Central finite-difference check of the network's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::network::{forward_trace, grouped_loss_and_gradients, Architecture, Group, NetworkWeights, PreparedSample, BLOCK_NAMES};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub draws: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Draws whose ReLU pre-activations come closer to zero than this are
    /// redrawn, since the loss is not differentiable at the kink.
    pub kink_margin: f64,
    pub weight_decay: f64,
    /// Test hook: scale every analytic gradient by 1.01 before comparing.
    pub corrupt_analytic: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            draws: 100,
            epsilon: 1e-5,
            tolerance: 1e-4,
            kink_margin: 1e-3,
            weight_decay: 1e-3,
            corrupt_analytic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub block: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub draws: usize,
    pub redraws: usize,
    pub tolerance: f64,
    pub blocks: Vec<BlockError>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.max_rel_error))
    }
}

const ARCH: Architecture = Architecture {
    d_lane: 4,
    d_img: 3,
    h1: 6,
    h2: 5,
    h3: 6,
};

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn uniform(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

struct Draw {
    weights: NetworkWeights,
    samples: Vec<PreparedSample>,
    targets: Vec<f64>,
}

/// Three samples, the first without lanes so the default token is exercised.
fn draw(rng: &mut impl Rng) -> Draw {
    let mut weights = NetworkWeights::zeros(ARCH);
    for block in weights.blocks_mut() {
        let n = block.len();
        *block = uniform(rng, n, 1.0);
    }
    let samples = (0..3)
        .map(|k| {
            let n_lanes = if k == 0 { 0 } else { rng.random_range(1..=3) };
            let lanes = (0..n_lanes).map(|_| uniform(rng, ARCH.d_lane, 1.0)).collect();
            PreparedSample::new(lanes, uniform(rng, ARCH.d_img, 1.0))
        })
        .collect();
    let targets = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
    Draw {
        weights,
        samples,
        targets,
    }
}

/// Even draws supervise every sample on its own; odd draws average the
/// first two samples into one group.
fn groups_for<'a>(d: &'a Draw, grouped: bool) -> Vec<Group<'a>> {
    let s = &d.samples;
    if grouped {
        vec![
            Group {
                samples: vec![&s[0], &s[1]],
                target: d.targets[0],
            },
            Group {
                samples: vec![&s[2]],
                target: d.targets[2],
            },
        ]
    } else {
        s.iter()
            .zip(&d.targets)
            .map(|(x, &t)| Group {
                samples: vec![x],
                target: t,
            })
            .collect()
    }
}

fn near_kink(w: &NetworkWeights, samples: &[PreparedSample], margin: f64) -> bool {
    samples
        .iter()
        .any(|s| forward_trace(w, s).min_abs_preactivation() < margin)
}

/// Compares analytic and central-difference gradients of every parameter
/// over `config.draws` random (weights, batch) draws.
pub fn gradcheck(config: &GradcheckConfig) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut worst = [0.0f64; BLOCK_NAMES.len()];
    let mut redraws = 0;
    for k in 0..config.draws {
        let d = loop {
            let d = draw(&mut rng);
            if !near_kink(&d.weights, &d.samples, config.kink_margin) {
                break d;
            }
            redraws += 1;
        };
        let groups = groups_for(&d, k % 2 == 1);
        let (_, grad) = grouped_loss_and_gradients(&d.weights, &groups, config.weight_decay)
            .expect("non-empty batch");
        let loss_at = |w: &NetworkWeights| {
            grouped_loss_and_gradients(w, &groups, config.weight_decay)
                .expect("non-empty batch")
                .0
        };
        let mut probe = d.weights.clone();
        for (b, analytic) in grad.blocks().iter().enumerate() {
            for (i, &a) in analytic.iter().enumerate() {
                let original = probe.blocks()[b][i];
                probe.blocks_mut()[b][i] = original + config.epsilon;
                let up = loss_at(&probe);
                probe.blocks_mut()[b][i] = original - config.epsilon;
                let down = loss_at(&probe);
                probe.blocks_mut()[b][i] = original;
                let numeric = (up - down) / (2.0 * config.epsilon);
                let a = if config.corrupt_analytic { a * 1.01 } else { a };
                worst[b] = worst[b].max(relative_error(a, numeric));
            }
        }
    }
    GradcheckReport {
        draws: config.draws,
        redraws,
        tolerance: config.tolerance,
        blocks: BLOCK_NAMES
            .iter()
            .zip(worst)
            .map(|(&block, e)| BlockError {
                block,
                max_rel_error: e,
                passed: e < config.tolerance,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_and_is_repeatable() {
        let cfg = GradcheckConfig {
            draws: 20,
            ..GradcheckConfig::default()
        };
        let a = gradcheck(&cfg);
        assert!(a.passed(), "{a:?}");
        assert_eq!(a.blocks.len(), 9);
        assert_eq!(a, gradcheck(&cfg));
    }

    #[test]
    fn corrupted_gradient_fails() {
        let cfg = GradcheckConfig {
            draws: 4,
            corrupt_analytic: true,
            ..GradcheckConfig::default()
        };
        let r = gradcheck(&cfg);
        assert!(!r.passed());
        assert!(r.blocks.iter().all(|b| !b.passed), "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 2e-9) - 1e-3).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
