//! End-to-end commands behind the `cnn-tft` binary: each takes a resolved
//! [`RunConfig`], writes its artifacts into the output directory and echoes the
//! effective config next to them.

mod config;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BenchSection, DataSection, ExplainSection, RunConfig, TuneSection, OUT_ENV};

use crate::bayesopt::{self, BoError, Candidate, TuneResult};
use crate::explain::{self, ExplainConfig, ExplainError, InfluenceMap};
use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::{ModelConfig, ModelParams, NnError};
use crate::series::{self, ScalerParams, SeriesError, TimeSeries, WindowedDataset};
use crate::train::{
    self, box_summary, metrics, run_stats, BoxSummary, MetricsError, MetricsReport, RunStats,
    StatsError, TrainError,
};

pub const CHECKPOINT_FILE: &str = "model.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Numeric(_) => 4,
        }
    }
}

impl From<SeriesError> for PipelineError {
    fn from(e: SeriesError) -> Self {
        match e {
            SeriesError::InvalidSpec(_)
            | SeriesError::InvalidFraction(_)
            | SeriesError::WindowTooLarge { .. } => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for PipelineError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::InvalidConfig(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedLoss { .. } => PipelineError::Numeric(e.to_string()),
            TrainError::InvalidConfig(_) => PipelineError::Config(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Metrics(m) => m.into(),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<StatsError> for PipelineError {
    fn from(e: StatsError) -> Self {
        PipelineError::Numeric(e.to_string())
    }
}

impl From<CheckpointError> for PipelineError {
    fn from(e: CheckpointError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<BoError> for PipelineError {
    fn from(e: BoError) -> Self {
        match e {
            BoError::SingularKernel | BoError::NonFiniteObjective(_) | BoError::AllTrialsFailed(_) => {
                PipelineError::Numeric(e.to_string())
            }
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<ExplainError> for PipelineError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Model(m) => m.into(),
            ExplainError::MalformedAttention { .. } => PipelineError::Numeric(e.to_string()),
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Data(e.to_string())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn prepare_dir(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

fn seconds(cfg: &RunConfig, started: Instant) -> f64 {
    if cfg.timing {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

/// The configured series: the CSV file if one is named, otherwise synthesized.
pub fn load_series(cfg: &RunConfig) -> Result<TimeSeries, PipelineError> {
    Ok(match &cfg.data.csv {
        Some(p) => series::load_csv(p)?,
        None => series::synthesize(&cfg.data.synth)?,
    })
}

/// A chronological train/test split with a scaler fitted on the training part.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub series: TimeSeries,
    pub train: TimeSeries,
    pub test: TimeSeries,
    pub scaler: ScalerParams,
}

impl Prepared {
    pub fn new(series: TimeSeries, train_frac: f64) -> Result<Self, PipelineError> {
        let (train, test) = series::split(&series, train_frac)?;
        let scaler = series::fit_scaler(&train)?;
        Ok(Self { series, train, test, scaler })
    }

    /// Supervised windows over the scaled training segment.
    pub fn train_windows(&self, window: usize) -> Result<WindowedDataset, PipelineError> {
        Ok(WindowedDataset::from_values(
            &self.scaler.scale_all(self.train.values()),
            window,
        )?)
    }

    /// Raw-unit windows whose targets are the test values, in order: window
    /// `i` ends right before `test[i]`.
    pub fn test_windows(&self, window: usize) -> Result<Vec<Vec<f64>>, PipelineError> {
        let train = self.train.values();
        if train.len() < window {
            return Err(PipelineError::Config(format!(
                "training segment ({}) is shorter than the window {window}",
                train.len()
            )));
        }
        let mut joined = train[train.len() - window..].to_vec();
        joined.extend_from_slice(self.test.values());
        Ok((0..self.test.len())
            .map(|i| joined[i..i + window].to_vec())
            .collect())
    }
}

/// `metrics.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub horizon: usize,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub msle: f64,
    pub wall_seconds: f64,
}

impl MetricsFile {
    fn new(horizon: usize, m: MetricsReport, wall_seconds: f64) -> Self {
        Self {
            horizon,
            rmse: m.rmse,
            mae: m.mae,
            mape: m.mape,
            msle: m.msle,
            wall_seconds,
        }
    }
}

/// Writes the configured series to `series.csv`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    let dir = prepare_dir(cfg)?;
    let ts = load_series(cfg)?;
    let path = dir.join("series.csv");
    series::write_csv(&ts, &path)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub params: ModelParams,
    pub scaler: ScalerParams,
    pub loss_history: Vec<f64>,
    pub metrics: MetricsFile,
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

/// Trains on the first `train_frac` of the series, writes the checkpoint,
/// the per-epoch loss and one-step test metrics.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, PipelineError> {
    let dir = prepare_dir(cfg)?;
    let prep = Prepared::new(load_series(cfg)?, cfg.data.train_frac)?;
    let started = Instant::now();
    let data = prep.train_windows(cfg.model.window)?;
    let outcome = train::train(&cfg.model, &cfg.train, &data)?;
    let eval = train::evaluate_one_step(&outcome.params, &prep.scaler, prep.train.values(), prep.test.values())?;
    let report = metrics(&eval.actual, &eval.predicted)?;
    let metrics_file = MetricsFile::new(1, report, seconds(cfg, started));

    checkpoint::save(&outcome.params, prep.scaler, dir.join(CHECKPOINT_FILE))?;
    write_json(&dir.join("metrics.json"), &metrics_file)?;
    let rows: Vec<LossRow> = outcome
        .loss_history
        .iter()
        .enumerate()
        .map(|(i, l)| LossRow { epoch: i + 1, loss: *l })
        .collect();
    write_rows(&dir.join("loss_history.csv"), &rows)?;
    Ok(TrainSummary {
        params: outcome.params,
        scaler: prep.scaler,
        loss_history: outcome.loss_history,
        metrics: metrics_file,
    })
}

/// One row of `tune_log.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneLogRow {
    pub trial: usize,
    pub cnn_layers: usize,
    pub heads: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub rmse: f64,
    pub best_so_far: f64,
    pub wall_seconds: f64,
}

/// Validation RMSE (raw units, one step ahead) of `model` trained for
/// `epochs` on the head of the training segment and scored on its tail.
pub fn validation_rmse(
    prep: &Prepared,
    model: &ModelConfig,
    train_cfg: &train::TrainConfig,
    epochs: usize,
    validation_frac: f64,
) -> Result<f64, PipelineError> {
    let values = prep.train.values();
    let cut = ((1.0 - validation_frac) * values.len() as f64).floor() as usize;
    let (fit, val) = values.split_at(cut);
    if fit.len() <= model.window || val.is_empty() {
        return Err(PipelineError::Config(format!(
            "validation split leaves {} fitting and {} validation points for window {}",
            fit.len(),
            val.len(),
            model.window
        )));
    }
    model.validate()?;
    let data = WindowedDataset::from_values(&prep.scaler.scale_all(fit), model.window)?;
    let tc = train::TrainConfig { epochs, ..*train_cfg };
    let outcome = train::train(model, &tc, &data)?;
    let eval = train::evaluate_one_step(&outcome.params, &prep.scaler, fit, val)?;
    Ok(train::rmse(&eval.actual, &eval.predicted)?)
}

#[derive(Debug, Clone)]
pub struct TuneSummary {
    pub result: TuneResult,
    pub best_config: RunConfig,
}

/// Bayesian optimization of the architecture on validation RMSE. Writes
/// `tune_log.csv` and `best_config.json`, a run config with the winning
/// architecture that `train` accepts directly.
pub fn cmd_tune(cfg: &RunConfig) -> Result<TuneSummary, PipelineError> {
    let dir = prepare_dir(cfg)?;
    let prep = Prepared::new(load_series(cfg)?, cfg.data.train_frac)?;
    let objective = |c: &Candidate| {
        validation_rmse(&prep, &c.apply(&cfg.model), &cfg.train, cfg.tune.epochs, cfg.tune.validation_frac)
    };
    let result = bayesopt::tune(objective, &cfg.tune.space, &cfg.tune.search)?;
    let rows: Vec<TuneLogRow> = result
        .trials
        .iter()
        .map(|t| TuneLogRow {
            trial: t.trial,
            cnn_layers: t.candidate.cnn_layers,
            heads: t.candidate.heads,
            filters: t.candidate.filters,
            kernel_size: t.candidate.kernel_size,
            rmse: t.objective,
            best_so_far: t.best_so_far,
            wall_seconds: t.wall_seconds,
        })
        .collect();
    write_rows(&dir.join("tune_log.csv"), &rows)?;
    let mut best_config = cfg.clone();
    best_config.model = result.best.apply(&cfg.model);
    write_json(&dir.join("best_config.json"), &best_config)?;
    if cfg.plots {
        let objectives: Vec<f64> = result.trials.iter().map(|t| t.objective).collect();
        fs::write(
            dir.join("tune.svg"),
            svg::incumbent_figure(&objectives, &result.incumbent_curve()),
        )?;
    }
    Ok(TuneSummary { result, best_config })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub step: usize,
    pub value: f64,
}

/// Recursive forecast of `horizon` steps past the end of the configured series.
pub fn cmd_forecast(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    horizon: usize,
) -> Result<Vec<ForecastRow>, PipelineError> {
    let dir = prepare_dir(cfg)?;
    let (params, scaler) = checkpoint::load(checkpoint_path)?;
    let ts = load_series(cfg)?;
    let w = params.config.window;
    if ts.len() < w {
        return Err(PipelineError::Data(format!(
            "series has {} points, the model needs a window of {w}",
            ts.len()
        )));
    }
    let window = &ts.values()[ts.len() - w..];
    let values = train::forecast_recursive(&params, &scaler, window, horizon)?;
    let rows: Vec<ForecastRow> = values
        .into_iter()
        .enumerate()
        .map(|(i, value)| ForecastRow { step: i + 1, value })
        .collect();
    write_rows(&dir.join("forecast.csv"), &rows)?;
    Ok(rows)
}

/// One row of `influence.csv`; `lag_index` 1 is the newest value `t-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRow {
    pub lag_index: usize,
    pub shap: f64,
    pub attention: f64,
    pub combined: f64,
    pub smoothed: f64,
    pub reported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSummary {
    pub window_index: usize,
    pub base_value: f64,
    pub prediction: f64,
    pub prediction_raw: f64,
    pub recency_concentration: f64,
    pub edge_drop: usize,
    pub config: ExplainConfig,
}

/// Influence map of one test window, explained with training windows as background.
pub fn cmd_explain(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    window_index: Option<usize>,
) -> Result<(InfluenceMap, ExplainSummary), PipelineError> {
    let dir = prepare_dir(cfg)?;
    let (params, scaler) = checkpoint::load(checkpoint_path)?;
    let w = params.config.window;
    let ts = load_series(cfg)?;
    let (train_part, test_part) = series::split(&ts, cfg.data.train_frac)?;
    let prep = Prepared { series: ts, train: train_part, test: test_part, scaler };
    let tests = prep.test_windows(w)?;
    let idx = window_index
        .or(cfg.explain.window_index)
        .unwrap_or(tests.len().saturating_sub(1));
    let raw = tests.get(idx).ok_or_else(|| {
        PipelineError::Config(format!("window index {idx} outside 0..{}", tests.len()))
    })?;
    let background_pool = prep.train_windows(w)?.inputs;
    let ec = &cfg.explain.params;
    let background = explain::sample_background(&background_pool, ec.background_size, ec.seed);
    let x = scaler.scale_all(raw);
    let map = explain::explain(&params, &x, &background, ec)?;

    let rows: Vec<InfluenceRow> = (0..w)
        .rev()
        .map(|j| InfluenceRow {
            lag_index: map.lag_of(j),
            shap: map.shap[j],
            attention: map.attention[j],
            combined: map.combined[j],
            smoothed: map.smoothed[j],
            reported: map.is_reported(j),
        })
        .collect();
    write_rows(&dir.join("influence.csv"), &rows)?;
    let summary = ExplainSummary {
        window_index: idx,
        base_value: map.base_value,
        prediction: map.prediction,
        prediction_raw: scaler.unscale(map.prediction),
        recency_concentration: map.recency_concentration,
        edge_drop: map.reported_from,
        config: *ec,
    };
    write_json(&dir.join("explain.json"), &summary)?;
    if cfg.plots {
        fs::write(dir.join("explain.svg"), svg::influence_figure(raw, &map))?;
    }
    Ok((map, summary))
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub msle: f64,
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub horizon: usize,
    /// Metrics averaged over runs.
    pub model: MetricsReport,
    pub persistence: MetricsReport,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats<T> {
    pub rmse: T,
    pub mae: T,
    pub mape: T,
    pub msle: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: usize,
    pub horizons: Vec<HorizonReport>,
    /// Statistics of one-step test metrics across runs.
    pub run_stats: MetricStats<RunStats>,
    pub box_plots: MetricStats<BoxSummary>,
}

fn mean_report(rs: &[MetricsReport]) -> MetricsReport {
    let n = rs.len() as f64;
    MetricsReport {
        rmse: rs.iter().map(|r| r.rmse).sum::<f64>() / n,
        mae: rs.iter().map(|r| r.mae).sum::<f64>() / n,
        mape: rs.iter().map(|r| r.mape).sum::<f64>() / n,
        msle: rs.iter().map(|r| r.msle).sum::<f64>() / n,
    }
}

/// Repeats training with seeds `seed, seed + 1, ...` and records one-step test
/// metrics per run plus rolled-out metrics per horizon against persistence.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport, PipelineError> {
    let dir = prepare_dir(cfg)?;
    let prep = Prepared::new(load_series(cfg)?, cfg.data.train_frac)?;
    let data = prep.train_windows(cfg.model.window)?;
    let (history, test) = (prep.train.values(), prep.test.values());

    let mut rows = Vec::with_capacity(cfg.bench.runs);
    let mut per_horizon: Vec<Vec<MetricsReport>> = vec![Vec::new(); cfg.horizons.len()];
    let mut fit_total = vec![0.0; cfg.horizons.len()];
    let mut predict_total = vec![0.0; cfg.horizons.len()];
    let mut persistence = Vec::with_capacity(cfg.horizons.len());

    for run in 0..cfg.bench.runs {
        let model = ModelConfig { seed: cfg.model.seed + run as u64, ..cfg.model };
        let tc = train::TrainConfig { seed: cfg.train.seed + run as u64, ..cfg.train };
        let started = Instant::now();
        let params = train::train(&model, &tc, &data)?.params;
        let fit_seconds = seconds(cfg, started);
        let eval = train::evaluate_one_step(&params, &prep.scaler, history, test)?;
        let m = metrics(&eval.actual, &eval.predicted)?;
        rows.push(RunRow {
            run,
            seed: model.seed,
            rmse: m.rmse,
            mae: m.mae,
            mape: m.mape,
            msle: m.msle,
            fit_seconds,
        });
        for (k, &h) in cfg.horizons.iter().enumerate() {
            let started = Instant::now();
            let ev = train::rolling_origin(&params, &prep.scaler, history, test, h, 1)?;
            predict_total[k] += seconds(cfg, started);
            fit_total[k] += fit_seconds;
            per_horizon[k].push(metrics(&ev.actual, &ev.predicted)?);
            if run == 0 {
                persistence.push(metrics(&ev.actual, &ev.persistence)?);
            }
        }
    }

    let runs = cfg.bench.runs as f64;
    let horizons = cfg
        .horizons
        .iter()
        .enumerate()
        .map(|(k, &h)| HorizonReport {
            horizon: h,
            model: mean_report(&per_horizon[k]),
            persistence: persistence[k],
            fit_seconds: fit_total[k] / runs,
            predict_seconds: predict_total[k] / runs,
        })
        .collect();
    let column = |f: fn(&RunRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let cols = [
        column(|r| r.rmse),
        column(|r| r.mae),
        column(|r| r.mape),
        column(|r| r.msle),
    ];
    let stats: Vec<RunStats> = cols.iter().map(|c| run_stats(c)).collect::<Result<_, _>>()?;
    let boxes: Vec<BoxSummary> = cols.iter().map(|c| box_summary(c)).collect::<Result<_, _>>()?;
    let report = BenchReport {
        runs: cfg.bench.runs,
        horizons,
        run_stats: MetricStats { rmse: stats[0], mae: stats[1], mape: stats[2], msle: stats[3] },
        box_plots: MetricStats {
            rmse: boxes[0].clone(),
            mae: boxes[1].clone(),
            mape: boxes[2].clone(),
            msle: boxes[3].clone(),
        },
    };

    write_rows(&dir.join("runs.csv"), &rows)?;
    write_json(&dir.join("bench_report.json"), &report)?;
    if cfg.plots {
        let named: Vec<(String, BoxSummary)> = ["RMSE", "MAE", "MAPE", "MSLE"]
            .iter()
            .map(|s| s.to_string())
            .zip(boxes)
            .collect();
        fs::write(
            dir.join("boxplot.svg"),
            svg::box_figure(&format!("Test metrics over {} runs", cfg.bench.runs), &named),
        )?;
    }
    Ok(report)
}
