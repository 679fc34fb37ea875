//! Point-forecast error metrics, computed in raw series units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("actual and predicted lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no values to score")]
    EmptyInput,
    #[error("MAPE undefined: actual value at index {0} is zero")]
    MapeUndefined(usize),
    #[error("MSLE undefined: value at index {0} is <= -1")]
    MsleUndefined(usize),
}

/// RMSE, MAE, MAPE (as a fraction) and MSLE (log1p convention) of one
/// `(actual, predicted)` pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub msle: f64,
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<(), MetricsError> {
    if y.len() != y_hat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check(y, y_hat)?;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, p)| (p - a).powi(2)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check(y, y_hat)?;
    let sae: f64 = y.iter().zip(y_hat).map(|(a, p)| (p - a).abs()).sum();
    Ok(sae / y.len() as f64)
}

pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check(y, y_hat)?;
    if let Some(i) = y.iter().position(|&a| a == 0.0) {
        return Err(MetricsError::MapeUndefined(i));
    }
    let s: f64 = y.iter().zip(y_hat).map(|(a, p)| ((p - a) / a).abs()).sum();
    Ok(s / y.len() as f64)
}

pub fn msle(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check(y, y_hat)?;
    for (i, (a, p)) in y.iter().zip(y_hat).enumerate() {
        if *a <= -1.0 || *p <= -1.0 {
            return Err(MetricsError::MsleUndefined(i));
        }
    }
    let s: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, p)| (p.ln_1p() - a.ln_1p()).powi(2))
        .sum();
    Ok(s / y.len() as f64)
}

pub fn metrics(y: &[f64], y_hat: &[f64]) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        rmse: rmse(y, y_hat)?,
        mae: mae(y, y_hat)?,
        mape: mape(y, y_hat)?,
        msle: msle(y, y_hat)?,
    })
}
