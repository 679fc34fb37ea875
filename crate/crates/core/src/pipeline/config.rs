//! The JSON run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::bayesopt::{SearchSpace, TuneConfig};
use crate::explain::ExplainConfig;
use crate::nn::ModelConfig;
use crate::series::SynthSpec;
use crate::train::TrainConfig;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "CNN_TFT_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV file with a `timestamp,value` header. When absent the series is synthesized.
    pub csv: Option<PathBuf>,
    pub synth: SynthSpec,
    pub train_frac: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            synth: SynthSpec::default(),
            train_frac: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub search: TuneConfig,
    pub space: SearchSpace,
    /// Training epochs per trial.
    pub epochs: usize,
    /// Tail fraction of the training segment used to score trials.
    pub validation_frac: f64,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            search: TuneConfig::default(),
            space: SearchSpace::default(),
            epochs: 20,
            validation_frac: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub params: ExplainConfig,
    /// Index into the test windows; `None` explains the last one.
    pub window_index: Option<usize>,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            params: ExplainConfig::default(),
            window_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub runs: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { runs: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tune: TuneSection,
    pub explain: ExplainSection,
    pub bench: BenchSection,
    pub horizons: Vec<usize>,
    pub output_dir: Option<PathBuf>,
    /// When set, replaces the model, training, tuning and explanation seeds.
    pub seed: Option<u64>,
    /// Record wall-clock durations. Off by default so outputs are byte-reproducible.
    pub timing: bool,
    pub plots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            tune: TuneSection::default(),
            explain: ExplainSection::default(),
            bench: BenchSection::default(),
            horizons: vec![15],
            output_dir: None,
            seed: None,
            timing: false,
            plots: true,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Pushes the global seed into every seeded section.
    pub fn resolve_seeds(&mut self) {
        if let Some(s) = self.seed {
            self.model.seed = s;
            self.train.seed = s;
            self.tune.search.seed = s;
            self.explain.params.seed = s;
        }
        self.tune.search.record_time = self.timing;
    }

    /// Output directory: the configured one, else `$CNN_TFT_OUT`, else `out`.
    pub fn out_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: String| PipelineError::Config(e);
        self.model.validate().map_err(|e| cfg(e.to_string()))?;
        self.train.validate().map_err(|e| cfg(e.to_string()))?;
        self.tune.space.validate().map_err(|e| cfg(e.to_string()))?;
        self.tune.search.validate().map_err(|e| cfg(e.to_string()))?;
        self.explain
            .params
            .validate(self.model.window)
            .map_err(|e| cfg(e.to_string()))?;
        if self.data.csv.is_none() {
            self.data.synth.validate().map_err(|e| cfg(e.to_string()))?;
        }
        if !(self.data.train_frac > 0.0 && self.data.train_frac < 1.0) {
            return Err(cfg(format!("train_frac {} not in (0, 1)", self.data.train_frac)));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(cfg("horizons must be a non-empty list of positive counts".into()));
        }
        if self.tune.epochs == 0 {
            return Err(cfg("tune.epochs must be at least 1".into()));
        }
        if !(self.tune.validation_frac > 0.0 && self.tune.validation_frac < 1.0) {
            return Err(cfg("tune.validation_frac must lie in (0, 1)".into()));
        }
        if self.bench.runs < 4 {
            return Err(cfg(format!("bench.runs must be at least 4, got {}", self.bench.runs)));
        }
        Ok(())
    }
}
