use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this variance of the inputs the fit degenerates to a constant.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// A fitted line `y = slope · x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Sum of squared residuals over the given points.
    pub fn residual_ss(&self, xs: &[f64], ys: &[f64]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| (y - self.predict(x)).powi(2))
            .sum()
    }
}

/// Ordinary least squares on centered data. When the inputs have
/// (numerically) no spread the fit is the constant `mean(ys)`.
pub fn fit_linear_regression(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::dimension("regression targets", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::Insufficient(format!(
            "linear regression needs at least 2 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Consistency("non-finite regression input".into()));
    }
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx / n < DEGENERATE_VARIANCE {
        return Ok(LinearFit {
            slope: 0.0,
            intercept: y_mean,
        });
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: y_mean - slope * x_mean,
    })
}
