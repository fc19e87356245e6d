//! Weighted log-log regression and simple summary statistics.

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("scale values must be positive")]
    NonPositiveScale,
    #[error("series has a zero value at index {0}")]
    ZeroValue(usize),
}

/// Result of fitting `log|value| = slope·log(scale) + intercept`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub ci_half_width: f64,
    pub stderr: f64,
    /// Number of values that were negative (fitted through `|value|`).
    pub negative_values: usize,
}

impl Fit {
    pub fn ci(&self) -> (f64, f64) {
        (self.slope - self.ci_half_width, self.slope + self.ci_half_width)
    }
}

/// Weighted least squares on log-log axes with a Student-t 95% interval.
/// `weights` defaults to uniform.
pub fn fit_exponent(series: &[(f64, f64)], weights: Option<&[f64]>) -> Result<Fit, FitError> {
    if series.len() < 4 {
        return Err(FitError::TooFew { need: 4, got: series.len() });
    }
    let mut negative_values = 0;
    let mut pts = Vec::with_capacity(series.len());
    for (i, &(s, v)) in series.iter().enumerate() {
        if s <= 0.0 {
            return Err(FitError::NonPositiveScale);
        }
        if v == 0.0 {
            return Err(FitError::ZeroValue(i));
        }
        if v < 0.0 {
            negative_values += 1;
        }
        pts.push((s.ln(), v.abs().ln(), weights.map_or(1.0, |w| w[i])));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let n = pts.len() as f64;
    let rss: f64 = pts.iter().map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2)).sum();
    // weights are treated as relative precisions; residual variance is estimated
    let sigma2 = rss / (n - 2.0);
    let stderr = (sigma2 / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0).expect("n >= 4").inverse_cdf(0.975);
    Ok(Fit { slope, intercept, ci_half_width: t * stderr, stderr, negative_values })
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
