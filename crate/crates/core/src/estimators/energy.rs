//! Energy-based estimator: mean free energy of the lane/background logits,
//! mapped to F1 by a linear regression whose temperature is chosen on the
//! validation sets.

use super::{fit_linear_regression, CalibrationArtifact, LabeledSet};
use crate::data::{Lane, MiniDataset};
use crate::error::{Error, Result};

pub const TEMPERATURE_GRID_LEN: usize = 25;
pub const TEMPERATURE_MIN: f64 = 0.1;
pub const TEMPERATURE_MAX: f64 = 10.0;

/// `-T · log Σ_j exp(logit_j / T)` over the logit pair, evaluated with a
/// max shift.
pub fn energy_from_logits(logits: [f64; 2], temperature: f64) -> f64 {
    let a = logits[0] / temperature;
    let b = logits[1] / temperature;
    let m = a.max(b);
    -temperature * (m + ((a - m).exp() + (b - m).exp()).ln())
}

pub fn energy_score(lane: &Lane, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature {temperature} must be > 0")));
    }
    Ok(energy_from_logits(lane.logits()?, temperature))
}

/// Mean energy over every predicted lane; `None` when there are none.
pub fn mean_energy(dataset: &MiniDataset, temperature: f64) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut n = 0usize;
    for lane in dataset.pred_lanes() {
        total += energy_score(lane, temperature)?;
        n += 1;
    }
    Ok((n > 0).then(|| total / n as f64))
}

/// 25 log-spaced temperatures from 0.1 to 10 (1.0 is the 13th).
pub fn temperature_grid() -> Vec<f64> {
    let span = (TEMPERATURE_MAX / TEMPERATURE_MIN).log10();
    let lo = TEMPERATURE_MIN.log10();
    (0..TEMPERATURE_GRID_LEN)
        .map(|k| 10f64.powf(lo + span * k as f64 / (TEMPERATURE_GRID_LEN - 1) as f64))
        .collect()
}

/// For each grid temperature, regress F1 on the sets' mean energies and keep
/// the temperature with the smallest residual sum of squares (ties: the
/// smallest temperature). Sets without predicted lanes are skipped.
pub fn ebm_calibrate(val_sets: &[LabeledSet<'_>]) -> Result<CalibrationArtifact> {
    let usable: Vec<&LabeledSet<'_>> = val_sets
        .iter()
        .filter(|s| s.dataset.pred_lane_count() > 0)
        .collect();
    if usable.is_empty() {
        return Err(Error::NoPredictedLanes("the validation mini-datasets".into()));
    }
    if usable.len() < 2 {
        return Err(Error::Insufficient(format!(
            "energy regression needs at least 2 validation mini-datasets with lanes, got {}",
            usable.len()
        )));
    }
    if usable.len() < val_sets.len() {
        log::warn!(
            "energy calibration skips {} validation mini-dataset(s) without predicted lanes",
            val_sets.len() - usable.len()
        );
    }
    let ys: Vec<f64> = usable.iter().map(|s| s.f1).collect();
    let mut best: Option<(f64, CalibrationArtifact)> = None;
    for temperature in temperature_grid() {
        let xs = usable
            .iter()
            .map(|s| Ok(mean_energy(s.dataset, temperature)?.expect("lanes present")))
            .collect::<Result<Vec<f64>>>()?;
        let regression = fit_linear_regression(&xs, &ys)?;
        let residual = regression.residual_ss(&xs, &ys);
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((
                residual,
                CalibrationArtifact::Ebm {
                    temperature,
                    regression,
                },
            ));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

pub fn ebm_estimate(dataset: &MiniDataset, artifact: &CalibrationArtifact) -> Result<f64> {
    let CalibrationArtifact::Ebm {
        temperature,
        regression,
    } = artifact
    else {
        return Err(artifact.wrong("ebm"));
    };
    Ok(match mean_energy(dataset, *temperature)? {
        None => 0.0,
        Some(e) => regression.predict(e).clamp(0.0, 1.0),
    })
}
