//! Lag influence maps: per-lag Shapley values multiplied element-wise by the
//! mean attention each lag receives, then smoothed with a 1-D Gaussian filter.

mod shapley;

use ndarray::Array3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{forward, predict, ModelParams, NnError};

pub use shapley::{shap_exact, shap_sampled, ShapResult, MAX_EXACT_WINDOW};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("attention row (head {head}, query {query}) sums to {sum} or has negative entries")]
    MalformedAttention { head: usize, query: usize, sum: f64 },
    #[error("exact Shapley values need w <= {MAX_EXACT_WINDOW}, got {0}")]
    WindowTooLargeForExact(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid explain config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapMode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub background_size: usize,
    pub shap_mode: ShapMode,
    /// Sampled orders; each is also walked in reverse.
    pub permutations: usize,
    pub smoothing_sigma: f64,
    /// Oldest lags left out of reports; `None` means `ceil(0.1 w)`.
    pub edge_drop: Option<usize>,
    /// Number of newest lags counted by the recency concentration.
    pub recent_lags: usize,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            background_size: 64,
            shap_mode: ShapMode::Sampled,
            permutations: 100,
            smoothing_sigma: 2.0,
            edge_drop: None,
            recent_lags: 10,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn edge_drop_for(&self, window: usize) -> usize {
        self.edge_drop
            .unwrap_or_else(|| (0.1 * window as f64).ceil() as usize)
    }

    pub fn validate(&self, window: usize) -> Result<(), ExplainError> {
        let bad = |m: String| Err(ExplainError::InvalidConfig(m));
        if self.background_size == 0 {
            return bad("background_size must be at least 1".into());
        }
        if self.shap_mode == ShapMode::Sampled && self.permutations == 0 {
            return bad("permutations must be at least 1".into());
        }
        if !(self.smoothing_sigma > 0.0) || !self.smoothing_sigma.is_finite() {
            return bad("smoothing_sigma must be positive".into());
        }
        let drop = self.edge_drop_for(window);
        if drop >= window {
            return bad(format!("edge_drop {drop} must be below the window {window}"));
        }
        if self.shap_mode == ShapMode::Exact && window > MAX_EXACT_WINDOW {
            return Err(ExplainError::WindowTooLargeForExact(window));
        }
        Ok(())
    }
}

/// Attention mass per key position, averaged over heads and queries.
pub fn mean_attention(a: &Array3<f64>) -> Result<Vec<f64>, ExplainError> {
    let (h, q, k) = a.dim();
    if h == 0 || q == 0 || k == 0 {
        return Err(ExplainError::InvalidConfig("empty attention tensor".into()));
    }
    let mut out = vec![0.0; k];
    for head in 0..h {
        for query in 0..q {
            let row = a.slice(ndarray::s![head, query, ..]);
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(ExplainError::MalformedAttention { head, query, sum });
            }
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    let n = (h * q) as f64;
    Ok(out.into_iter().map(|v| v / n).collect())
}

/// `c_i = s_i * a_i`.
pub fn combine(s: &[f64], a: &[f64]) -> Result<Vec<f64>, ExplainError> {
    if s.len() != a.len() {
        return Err(ExplainError::LengthMismatch(s.len(), a.len()));
    }
    Ok(s.iter().zip(a).map(|(x, y)| x * y).collect())
}

/// Normalized Gaussian weights for offsets `-r..=r`, `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Index into a signal of length `n` extended by half-sample symmetric
/// reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Convolution with [`gaussian_kernel`] under reflect padding.
pub fn gaussian_smooth(c: &[f64], sigma: f64) -> Vec<f64> {
    if c.is_empty() {
        return Vec::new();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    (0..c.len() as i64)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, g)| g * c[reflect(t + j as i64 - r, c.len())])
                .sum()
        })
        .collect()
}

/// Share of total `|s|` carried by the `recent` newest lags; 0 when all
/// attributions vanish.
pub fn recency_concentration(s: &[f64], recent: usize) -> f64 {
    let total: f64 = s.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let start = s.len().saturating_sub(recent);
    s[start..].iter().map(|v| v.abs()).sum::<f64>() / total
}

/// Up to `size` windows drawn without replacement (all of them if fewer).
pub fn sample_background(windows: &[Vec<f64>], size: usize, seed: u64) -> Vec<Vec<f64>> {
    if windows.len() <= size {
        return windows.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, windows.len(), size).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| windows[i].clone()).collect()
}

/// Influence of each lag of one window. Vectors run oldest lag first, so
/// index `j` is lag `t - (w - j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMap {
    pub shap: Vec<f64>,
    pub attention: Vec<f64>,
    pub combined: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub base_value: f64,
    pub prediction: f64,
    /// Window indices `edge_drop..w` kept in reports.
    pub reported_from: usize,
    pub recency_concentration: f64,
}

impl InfluenceMap {
    pub fn window(&self) -> usize {
        self.shap.len()
    }

    /// Lag number of window index `j`: 1 for the newest value.
    pub fn lag_of(&self, j: usize) -> usize {
        self.window() - j
    }

    pub fn is_reported(&self, j: usize) -> bool {
        j >= self.reported_from
    }
}

/// Runs the full influence pipeline on a scaled window `x` with background
/// windows `background` (also scaled).
pub fn explain(
    params: &ModelParams,
    x: &[f64],
    background: &[Vec<f64>],
    cfg: &ExplainConfig,
) -> Result<InfluenceMap, ExplainError> {
    let w = params.config.window;
    cfg.validate(w)?;
    if x.len() != w {
        return Err(ExplainError::LengthMismatch(x.len(), w));
    }
    let (prediction, trace) = forward(params, x)?;
    let attention = mean_attention(trace.attention_weights())?;
    for b in background {
        if b.len() != w {
            return Err(ExplainError::LengthMismatch(b.len(), w));
        }
    }
    let model = |z: &[f64]| predict(params, z).expect("window length checked");
    let shap = match cfg.shap_mode {
        ShapMode::Exact => shap_exact(model, x, background)?,
        ShapMode::Sampled => shap_sampled(model, x, background, cfg.permutations, cfg.seed)?,
    };
    let combined = combine(&shap.values, &attention)?;
    let smoothed = gaussian_smooth(&combined, cfg.smoothing_sigma);
    Ok(InfluenceMap {
        recency_concentration: recency_concentration(&shap.values, cfg.recent_lags),
        shap: shap.values,
        attention,
        combined,
        smoothed,
        base_value: shap.base_value,
        prediction,
        reported_from: cfg.edge_drop_for(w),
    })
}
