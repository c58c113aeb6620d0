use serde::Serialize;

use crate::error::{Error, Result};

fn check_lengths(actual: &[f64], estimated: &[f64], min: usize) -> Result<()> {
    if actual.len() != estimated.len() {
        return Err(Error::dimension("estimated values", actual.len(), estimated.len()));
    }
    if actual.len() < min {
        return Err(Error::Insufficient(format!(
            "need at least {min} value pair(s), got {}",
            actual.len()
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(actual: &[f64], estimated: &[f64]) -> Result<f64> {
    check_lengths(actual, estimated, 1)?;
    Ok(actual.iter().zip(estimated).map(|(a, e)| (a - e).abs()).sum::<f64>() / actual.len() as f64)
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spearman {
    pub rho: f64,
    /// Set when one side is constant and the correlation is undefined.
    pub constant: bool,
}

/// Rank correlation: Pearson correlation of the average ranks. Without ties
/// this equals `1 − 6Σd² / (N(N² − 1))`. A constant vector yields 0, flagged.
pub fn spearman_rho(actual: &[f64], estimated: &[f64]) -> Result<Spearman> {
    check_lengths(actual, estimated, 2)?;
    let ra = average_ranks(actual);
    let re = average_ranks(estimated);
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in ra.iter().zip(&re) {
        sab += (a - mean) * (b - mean);
        saa += (a - mean) * (a - mean);
        sbb += (b - mean) * (b - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        log::warn!("rank correlation undefined for a constant vector; reporting 0");
        return Ok(Spearman {
            rho: 0.0,
            constant: true,
        });
    }
    Ok(Spearman {
        rho: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
        constant: false,
    })
}
