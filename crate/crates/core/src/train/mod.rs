//! Mini-batch training with Adam, recursive multi-step forecasting and evaluation.

mod metrics;
mod stats;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, backward, forward, init_params, Gradients, ModelConfig, ModelParams, NnError};
use crate::series::{ScalerParams, WindowedDataset};

pub use metrics::{mae, mape, metrics, msle, rmse, MetricsError, MetricsReport};
pub use stats::{box_summary, quantile_sorted, run_stats, BoxSummary, RunStats, StatsError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch} (value {loss})")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// A batch MSE above this (on z-scored targets) counts as divergence.
    pub divergence_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            divergence_threshold: 1e6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        Ok(())
    }
}

/// Mean squared error and its gradient `2 (y_hat - y) / n`.
pub fn mse_loss(y_hat: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>), TrainError> {
    if y_hat.len() != y.len() {
        return Err(TrainError::LengthMismatch(y_hat.len(), y.len()));
    }
    if y.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    let n = y.len() as f64;
    let mut loss = 0.0;
    let grad = y_hat
        .iter()
        .zip(y)
        .map(|(p, t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Adam moment accumulators, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub first: Gradients,
    pub second: Gradients,
    pub step: u64,
}

impl OptState {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            first: Gradients::zeros(config),
            second: Gradients::zeros(config),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if !params.tensors.same_shapes(grads)
        || !params.tensors.same_shapes(&state.first)
        || !params.tensors.same_shapes(&state.second)
    {
        return Err(TrainError::ShapeMismatch(
            "gradient or optimizer state does not mirror the parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let g_all = grads.slices();
    let m_all = state.first.slices_mut();
    let v_all = state.second.slices_mut();
    for (((p, g), m), v) in params
        .tensors
        .slices_mut()
        .into_iter()
        .zip(g_all)
        .zip(m_all)
        .zip(v_all)
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Fitted parameters and the mean training MSE of each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub loss_history: Vec<f64>,
}

/// Trains from a fresh seeded initialization. Inputs and targets are expected
/// to be on the scaled axis.
pub fn train(
    config: &ModelConfig,
    tconfig: &TrainConfig,
    data: &WindowedDataset,
) -> Result<TrainOutcome, TrainError> {
    let params = init_params(config)?;
    train_from(params, tconfig, data)
}

/// Continues training from the given parameters.
pub fn train_from(
    mut params: ModelParams,
    tconfig: &TrainConfig,
    data: &WindowedDataset,
) -> Result<TrainOutcome, TrainError> {
    tconfig.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if data.window != params.config.window {
        return Err(TrainError::ShapeMismatch(format!(
            "dataset window {} vs model window {}",
            data.window, params.config.window
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tconfig.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut opt = OptState::new(&params.config);
    let mut history = Vec::with_capacity(tconfig.epochs);

    for epoch in 0..tconfig.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sse = 0.0;
        for batch in order.chunks(tconfig.batch_size) {
            let mut preds = Vec::with_capacity(batch.len());
            let mut traces = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let (y_hat, trace) = forward(&params, &data.inputs[i])?;
                preds.push(y_hat);
                traces.push(trace);
                targets.push(data.targets[i]);
            }
            let (loss, d_preds) = mse_loss(&preds, &targets)?;
            if !loss.is_finite() || loss > tconfig.divergence_threshold {
                return Err(TrainError::DivergedLoss { epoch, loss });
            }
            epoch_sse += loss * batch.len() as f64;

            let mut grads = Gradients::zeros(&params.config);
            for (trace, d) in traces.iter().zip(&d_preds) {
                grads.accumulate(&backward(&params, trace, *d)?);
            }
            adam_step(&mut params, &grads, &mut opt, tconfig)?;
            if !params.tensors.all_finite() {
                return Err(TrainError::DivergedLoss { epoch, loss: f64::NAN });
            }
        }
        history.push(epoch_sse / data.len() as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}

/// Autoregressive multi-step forecast. `last_window` is in raw units; each
/// step's scaled prediction is appended to the window before the next step.
/// Returns raw-unit forecasts.
pub fn forecast_recursive(
    params: &ModelParams,
    scaler: &ScalerParams,
    last_window: &[f64],
    horizon: usize,
) -> Result<Vec<f64>, TrainError> {
    let w = params.config.window;
    if last_window.len() != w {
        return Err(TrainError::ShapeMismatch(format!(
            "window has length {}, model expects {w}",
            last_window.len()
        )));
    }
    if horizon == 0 {
        return Err(TrainError::ShapeMismatch("horizon must be at least 1".into()));
    }
    let mut window = scaler.scale_all(last_window);
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = nn::predict(params, &window)?;
        out.push(scaler.unscale(next));
        window.remove(0);
        window.push(next);
    }
    Ok(out)
}

/// Naive forecast repeating the last observed value.
pub fn persistence_forecast(last_window: &[f64], horizon: usize) -> Vec<f64> {
    let last = *last_window.last().expect("non-empty window");
    vec![last; horizon]
}

/// Paired actual/predicted values from a held-out evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub persistence: Vec<f64>,
}

/// One-step-ahead predictions over `test`, using the tail of `history` as
/// context for the first windows. All values in raw units.
pub fn evaluate_one_step(
    params: &ModelParams,
    scaler: &ScalerParams,
    history: &[f64],
    test: &[f64],
) -> Result<Evaluation, TrainError> {
    rolling_origin(params, scaler, history, test, 1, 1)
}

/// Rolling-origin evaluation: from every `stride`-th origin in `test`, forecast
/// `horizon` steps recursively and compare with the realized values.
pub fn rolling_origin(
    params: &ModelParams,
    scaler: &ScalerParams,
    history: &[f64],
    test: &[f64],
    horizon: usize,
    stride: usize,
) -> Result<Evaluation, TrainError> {
    let w = params.config.window;
    if history.len() < w {
        return Err(TrainError::ShapeMismatch(format!(
            "history of {} points is shorter than the window {w}",
            history.len()
        )));
    }
    if horizon == 0 || stride == 0 || test.len() < horizon {
        return Err(TrainError::ShapeMismatch(format!(
            "cannot evaluate horizon {horizon} with stride {stride} on {} test points",
            test.len()
        )));
    }
    let mut joined = history[history.len() - w..].to_vec();
    joined.extend_from_slice(test);
    let mut eval = Evaluation::default();
    let mut origin = 0;
    while origin + horizon <= test.len() {
        let window = &joined[origin..origin + w];
        eval.predicted
            .extend(forecast_recursive(params, scaler, window, horizon)?);
        eval.persistence.extend(persistence_forecast(window, horizon));
        eval.actual.extend_from_slice(&test[origin..origin + horizon]);
        origin += stride;
    }
    Ok(eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::predict;
    use rand::Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            window: 8,
            cnn_layers: 2,
            filters: 4,
            kernel_size: 2,
            heads: 2,
            head_dim: Some(2),
            seed: 3,
        }
    }

    fn random_dataset(n: usize, w: usize, seed: u64) -> WindowedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n + w).map(|_| rng.random_range(-1.0..1.0)).collect();
        WindowedDataset::from_values(&values, w).unwrap()
    }

    #[test]
    fn mse_cases() {
        let (l, g) = mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
        let (l, g) = mse_loss(&[2.0], &[0.0]).unwrap();
        assert_eq!((l, g), (4.0, vec![4.0]));
        assert!(matches!(mse_loss(&[], &[]), Err(TrainError::EmptyInput)));
        assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(TrainError::LengthMismatch(1, 2))));
    }

    #[test]
    fn mse_matches_two_pass_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mut sq = 0.0;
        for d in &diffs {
            sq += d * d;
        }
        let (l, g) = mse_loss(&a, &b).unwrap();
        assert!((l - sq / 100.0).abs() < 1e-12);
        for (gi, d) in g.iter().zip(&diffs) {
            assert!((gi - d / 50.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient() {
        let mut p = init_params(&tiny()).unwrap();
        let before = p.clone();
        let mut st = OptState::new(&p.config);
        st.first.scale(0.0);
        for s in st.first.slices_mut() {
            s.fill(0.5);
        }
        let g = Gradients::zeros(&p.config);
        adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap();
        assert!(st.first.slices().iter().all(|s| s.iter().all(|&v| (v - 0.45).abs() < 1e-15)));
        // moments decayed but still positive, so parameters move; with zero moments they stay
        let mut p2 = before.clone();
        let mut st2 = OptState::new(&p2.config);
        adam_step(&mut p2, &g, &mut st2, &TrainConfig::default()).unwrap();
        assert_eq!(p2, before);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = init_params(&tiny()).unwrap();
        let before = p.clone();
        let mut g = Gradients::zeros(&p.config);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in g.slices_mut() {
            for v in s.iter_mut() {
                let mag = rng.random_range(0.01..10.0);
                *v = if rng.random_bool(0.5) { mag } else { -mag };
            }
        }
        let cfg = TrainConfig::default();
        let mut st = OptState::new(&p.config);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        for ((after, prev), grad) in p.tensors.slices().iter().zip(before.tensors.slices()).zip(g.slices()) {
            for i in 0..after.len() {
                let step = after[i] - prev[i];
                let expect = -cfg.learning_rate * grad[i].signum();
                assert!((step - expect).abs() <= 0.01 * cfg.learning_rate);
            }
        }
    }

    #[test]
    fn adam_is_deterministic_and_checks_shapes() {
        let p0 = init_params(&tiny()).unwrap();
        let mut g = Gradients::zeros(&p0.config);
        g.head.b_out = 0.3;
        let run = || {
            let mut p = p0.clone();
            let mut st = OptState::new(&p.config);
            adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap();
            (p, st)
        };
        assert_eq!(run(), run());

        let other = Gradients::zeros(&ModelConfig { filters: 5, ..tiny() });
        let mut p = p0.clone();
        let mut st = OptState::new(&p.config);
        assert!(adam_step(&mut p, &other, &mut st, &TrainConfig::default()).is_err());
    }

    #[test]
    fn constant_target_is_learned() {
        let values = vec![0.7; 200];
        let data = WindowedDataset::from_values(&values, 8).unwrap();
        let tc = TrainConfig {
            epochs: 20,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let out = train(&tiny(), &tc, &data).unwrap();
        let preds: Vec<f64> = data.inputs.iter().map(|x| predict(&out.params, x).unwrap()).collect();
        let r = rmse(&data.targets, &preds).unwrap();
        assert!(r < 1e-2, "rmse {r}");
    }

    #[test]
    fn training_is_reproducible() {
        let data = random_dataset(100, 8, 4);
        let tc = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let a = train(&tiny(), &tc, &data).unwrap();
        let b = train(&tiny(), &tc, &data).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.params, b.params);
        assert!(a.loss_history.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let data = random_dataset(200, 8, 6);
        let tc = TrainConfig {
            epochs: 50,
            learning_rate: 1e3,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&tiny(), &tc, &data), Err(TrainError::DivergedLoss { .. })));
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = WindowedDataset { inputs: vec![], targets: vec![], window: 8 };
        assert!(matches!(
            train(&tiny(), &TrainConfig::default(), &data),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn recursive_forecast_base_cases() {
        let mut p = init_params(&tiny()).unwrap();
        let scaler = ScalerParams { mean: 10.0, std: 2.0 };
        let window: Vec<f64> = (0..8).map(|i| 10.0 + i as f64 * 0.3).collect();

        let one = forecast_recursive(&p, &scaler, &window, 1).unwrap();
        let direct = scaler.unscale(predict(&p, &scaler.scale_all(&window)).unwrap());
        assert_eq!(one, vec![direct]);

        let three = forecast_recursive(&p, &scaler, &window, 3).unwrap();
        let mut w = scaler.scale_all(&window);
        let mut manual = Vec::new();
        for _ in 0..3 {
            let y = predict(&p, &w).unwrap();
            manual.push(scaler.unscale(y));
            w = w[1..].iter().copied().chain(std::iter::once(y)).collect();
        }
        assert_eq!(three, manual);

        for s in p.tensors.slices_mut() {
            s.fill(0.0);
        }
        p.tensors.head.b_out = 0.5;
        assert_eq!(forecast_recursive(&p, &scaler, &window, 4).unwrap(), vec![11.0; 4]);
        assert!(forecast_recursive(&p, &scaler, &window[1..], 2).is_err());
    }

    #[test]
    fn rolling_origin_persistence() {
        let p = init_params(&tiny()).unwrap();
        let history: Vec<f64> = (0..20).map(f64::from).collect();
        let test: Vec<f64> = (20..30).map(f64::from).collect();
        let ev = rolling_origin(&p, &ScalerParams::identity(), &history, &test, 3, 1).unwrap();
        assert_eq!(ev.actual.len(), 8 * 3);
        // persistence from origin o repeats the last observed value 19 + o
        for (o, chunk) in ev.persistence.chunks(3).enumerate() {
            assert!(chunk.iter().all(|&v| v == 19.0 + o as f64));
        }
        assert_eq!(&ev.actual[..3], &[20.0, 21.0, 22.0]);
    }
}
