//! Descriptive statistics over repeated runs and the box-plot rule used to draw them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("samples have zero variance; skewness and kurtosis are undefined")]
    ZeroVarianceShapeStats,
    #[error("sample {0} is not finite")]
    NonFinite(usize),
}

/// Summary of `n >= 4` run results.
///
/// `std` is the sample standard deviation (n - 1). Quartiles interpolate
/// linearly between order statistics at position `(n - 1) * p`.
/// `skewness` is the adjusted Fisher-Pearson coefficient G1 and
/// `excess_kurtosis` the bias-adjusted G2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub range: f64,
    pub iqr: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn run_stats(values: &[f64]) -> Result<RunStats, StatsError> {
    let n = values.len();
    if n < 4 {
        return Err(StatsError::TooFewSamples(n));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    if m2 == 0.0 {
        return Err(StatsError::ZeroVarianceShapeStats);
    }
    let g1 = m3 / m2.powf(1.5);
    let g2 = m4 / (m2 * m2) - 3.0;
    let skewness = g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0);
    let excess_kurtosis = ((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0));

    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let (min, max) = (sorted[0], sorted[n - 1]);
    Ok(RunStats {
        mean,
        std: (m2 * nf / (nf - 1.0)).sqrt(),
        min,
        max,
        median,
        q1,
        q3,
        range: max - min,
        iqr: q3 - q1,
        skewness,
        excess_kurtosis,
    })
}

/// Box-plot geometry: fences at `Q1 - 1.5 IQR` and `Q3 + 1.5 IQR`, whiskers at
/// the most extreme samples inside the fences, outliers beyond them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

pub fn box_summary(values: &[f64]) -> Result<BoxSummary, StatsError> {
    let stats = run_stats(values)?;
    let lower_fence = stats.q1 - 1.5 * stats.iqr;
    let upper_fence = stats.q3 + 1.5 * stats.iqr;
    let inside = values
        .iter()
        .copied()
        .filter(|v| *v >= lower_fence && *v <= upper_fence);
    let lower_whisker = inside.clone().fold(f64::INFINITY, f64::min);
    let upper_whisker = inside.fold(f64::NEG_INFINITY, f64::max);
    let outliers = values
        .iter()
        .copied()
        .filter(|v| *v < lower_fence || *v > upper_fence)
        .collect();
    Ok(BoxSummary {
        q1: stats.q1,
        median: stats.median,
        q3: stats.q3,
        lower_fence,
        upper_fence,
        lower_whisker,
        upper_whisker,
        outliers,
    })
}
