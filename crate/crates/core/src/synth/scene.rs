use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::SynthConfig;
use crate::data::{lane_probability, Lane, Sample};
use crate::eval::rasterize_lane;

/// The simulated detector is the same network whatever the corpus seed, so
/// its feature directions come from a fixed seed.
const DETECTOR_SEED: u64 = 0x1a9e_0de7;

const CONFIDENCE_FEATURE_GAIN: f64 = 0.8;
const SPURIOUS_FEATURE_GAIN: f64 = 1.5;
const JITTER_FEATURE_GAIN: f64 = 1.2;
const COUNT_EMBEDDING_GAIN: f64 = 0.3;
/// Per-point noise relative to the lateral error scale.
const POINT_NOISE: f64 = 0.15;
const FP_SLOTS: usize = 2;

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub(crate) struct Directions {
    shift: Vec<f64>,
    confidence: Vec<f64>,
    spurious: Vec<f64>,
    jitter: Vec<f64>,
    severity: Vec<f64>,
    count: Vec<f64>,
}

impl Directions {
    pub(crate) fn new(d_lane: usize, d_img: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(DETECTOR_SEED);
        Directions {
            shift: unit_vector(&mut rng, d_lane),
            confidence: unit_vector(&mut rng, d_lane),
            spurious: unit_vector(&mut rng, d_lane),
            jitter: unit_vector(&mut rng, d_lane),
            severity: unit_vector(&mut rng, d_img),
            count: unit_vector(&mut rng, d_img),
        }
    }
}

/// Polyline from the bottom edge to the horizon, drifting towards the
/// vanishing point `x_v` and bending by `bend` pixels at the far end.
fn polyline(cfg: &SynthConfig, x_bottom: f64, x_v: f64, bend: f64) -> Vec<[f64; 2]> {
    let g = &cfg.geometry;
    let y0 = cfg.image_height as f64 - 1.0;
    let y1 = cfg.image_height as f64 * g.horizon;
    (0..g.points_per_lane)
        .map(|k| {
            let t = k as f64 / (g.points_per_lane - 1) as f64;
            [x_bottom + (x_v - x_bottom) * g.convergence * t + bend * t * t, y0 + (y1 - y0) * t]
        })
        .collect()
}

fn ground_truth(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<Lane> {
    let g = &cfg.geometry;
    let w = cfg.image_width as f64;
    let (lo, hi) = cfg.lanes_per_frame;
    let n = rng.random_range(lo..=hi);
    let spacing = rng.random_range(g.spacing.0..=g.spacing.1);
    let x_v = w / 2.0 + rng.random_range(-0.06..=0.06) * w;
    let bend = rng.random_range(-g.max_bend..=g.max_bend);
    let center = w / 2.0 + rng.random_range(-0.25..=0.25) * spacing;
    (0..n)
        .map(|i| {
            let x = center + (i as f64 - (n - 1) as f64 / 2.0) * spacing + rng.random_range(-0.05..=0.05) * spacing;
            Lane::ground_truth(polyline(cfg, x, x_v, bend))
        })
        .collect()
}

fn predicted_lane(
    cfg: &SynthConfig,
    dirs: &Directions,
    rng: &mut impl Rng,
    points: Vec<[f64; 2]>,
    raw_confidence: f64,
    spurious: bool,
    lateral_error: f64,
    difficulty: f64,
) -> Lane {
    let d = &cfg.detector;
    let c = raw_confidence.clamp(0.02, 0.98);
    let logit = (c / (1.0 - c)).ln();
    let logits = [(d.logit_margin + logit) / 2.0, (d.logit_margin - logit) / 2.0];
    let quality = lateral_error.min(1.0);
    let feature = (0..cfg.d_lane)
        .map(|j| {
            d.feature_shift * difficulty * dirs.shift[j]
                + CONFIDENCE_FEATURE_GAIN * logit * dirs.confidence[j]
                + if spurious { SPURIOUS_FEATURE_GAIN * dirs.spurious[j] } else { 0.0 }
                + JITTER_FEATURE_GAIN * quality * dirs.jitter[j]
                + d.feature_noise * normal(rng)
        })
        .collect();
    Lane::predicted(points, lane_probability(logits), Some(logits), feature)
}

/// One frame at the given difficulty. `empty` frames hold no lanes and no
/// predictions.
pub(crate) fn simulate_frame(
    cfg: &SynthConfig,
    dirs: &Directions,
    rng: &mut impl Rng,
    difficulty: f64,
    empty: bool,
) -> (Vec<Lane>, Vec<Lane>, Vec<f64>) {
    let d = &cfg.detector;
    let gts = if empty { Vec::new() } else { ground_truth(cfg, rng) };
    let mut preds = Vec::new();
    if !empty {
        let sigma = d.jitter_sigma(difficulty);
        for gt in &gts {
            if rng.random::<f64>() < d.drop_probability(difficulty) {
                continue;
            }
            let near = sigma * normal(rng);
            let far = sigma * normal(rng);
            let n = gt.points.len() - 1;
            let points = gt
                .points
                .iter()
                .enumerate()
                .map(|(k, &[x, y])| {
                    let t = k as f64 / n as f64;
                    [x + near + (far - near) * t + POINT_NOISE * sigma * normal(rng), y]
                })
                .collect();
            let lateral = ((near * near + far * far) / 2.0).sqrt() / cfg.stroke_width;
            let raw = d.confidence_tp
                - d.confidence_slope * difficulty
                - d.confidence_quality * lateral.min(1.0)
                + d.confidence_noise * normal(rng);
            preds.push(predicted_lane(cfg, dirs, rng, points, raw, false, lateral, difficulty));
        }
        for _ in 0..FP_SLOTS {
            if rng.random::<f64>() >= d.fp_probability(difficulty) {
                continue;
            }
            let w = cfg.image_width as f64;
            let x = rng.random_range(0.05..=0.95) * w;
            let x_v = w / 2.0 + rng.random_range(-0.1..=0.1) * w;
            let bend = rng.random_range(-1.0..=1.0) * cfg.geometry.max_bend;
            let raw = d.confidence_fp - d.confidence_slope * difficulty + d.confidence_noise * normal(rng);
            let points = polyline(cfg, x, x_v, bend);
            preds.push(predicted_lane(cfg, dirs, rng, points, raw, true, 1.0, difficulty));
        }
        preds.shuffle(rng);
    }
    let mid = (cfg.lanes_per_frame.0 + cfg.lanes_per_frame.1) as f64 / 2.0;
    let embedding = (0..cfg.d_img)
        .map(|j| {
            d.embedding_shift * difficulty * dirs.severity[j]
                + COUNT_EMBEDDING_GAIN * (gts.len() as f64 - mid) * dirs.count[j]
                + d.embedding_noise * normal(rng)
        })
        .collect();
    (gts, preds, embedding)
}

fn shade(rgb: [f64; 3], factor: f64) -> Rgb<u8> {
    Rgb(rgb.map(|c| (c * factor).round().clamp(0.0, 255.0) as u8))
}

/// Flat-color rendering: sky, road and ground-truth lane markings, all
/// darkening with difficulty.
pub fn render_frame(sample: &Sample, difficulty: f64, cfg: &SynthConfig) -> RgbImage {
    let (w, h) = (cfg.image_width, cfg.image_height);
    let horizon = (h as f64 * cfg.geometry.horizon) as u32;
    let sky = shade([150.0, 180.0, 215.0], 1.0 - 0.7 * difficulty);
    let road = shade([95.0, 95.0, 100.0], 1.0 - 0.6 * difficulty);
    let marking = shade([235.0, 235.0, 215.0], 1.0 - 0.4 * difficulty);
    let mut img = RgbImage::from_fn(w, h, |_, y| if y < horizon { sky } else { road });
    for lane in sample.gt_lanes.iter().flatten() {
        if let Ok(mask) = rasterize_lane(lane, cfg.stroke_width, (w, h)) {
            for &p in mask.pixels() {
                img.put_pixel(p % w, p / w, marking);
            }
        }
    }
    img
}
