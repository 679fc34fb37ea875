use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cnn_tft::pipeline::{self, PipelineError, RunConfig, CHECKPOINT_FILE, OUT_ENV};

#[derive(Parser)]
#[command(name = "cnn-tft", version, about = "Hybrid CNN + attention forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; unspecified fields take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Global seed for model init, shuffling, tuning and explanation.
    #[arg(long)]
    seed: Option<u64>,
    /// Read the series from this CSV instead of synthesizing it.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Record wall-clock durations in the outputs.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    no_plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic series to series.csv.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        length: Option<usize>,
    },
    /// Train on the training split and report one-step test metrics.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Bayesian optimization of the architecture.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Recursive multi-step forecast past the end of the series.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/model.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the first configured horizon.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Influence map of one test window.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index into the test windows; defaults to the last.
        #[arg(long)]
        window_index: Option<usize>,
    },
    /// Repeated training runs with per-horizon metrics and run statistics.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
        /// Comma-separated forecast horizons.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
    },
}

fn load(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &common.out {
        cfg.output_dir = Some(o.clone());
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(d) = &common.data {
        cfg.data.csv = Some(d.clone());
    }
    if let Some(e) = common.epochs {
        cfg.train.epochs = e;
    }
    cfg.timing |= common.timing;
    cfg.plots &= !common.no_plots;
    Ok(cfg)
}

fn finish(mut cfg: RunConfig) -> Result<RunConfig, PipelineError> {
    cfg.resolve_seeds();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Synth { common, length } => {
            let mut cfg = load(&common)?;
            if let Some(n) = length {
                cfg.data.synth.length = n;
            }
            let path = pipeline::cmd_synth(&finish(cfg)?)?;
            println!("wrote {}", path.display());
        }
        Command::Train { common } => {
            let cfg = finish(load(&common)?)?;
            let s = pipeline::cmd_train(&cfg)?;
            let m = &s.metrics;
            println!(
                "test one-step  rmse {:.4}  mae {:.4}  mape {:.4}  msle {:.6}",
                m.rmse, m.mae, m.mape, m.msle
            );
        }
        Command::Tune { common, budget } => {
            let mut cfg = load(&common)?;
            if let Some(b) = budget {
                cfg.tune.search.budget = b;
            }
            let s = pipeline::cmd_tune(&finish(cfg)?)?;
            println!("best {} validation rmse {:.4}", s.result.best, s.result.best_objective);
        }
        Command::Forecast { common, checkpoint, horizon } => {
            let cfg = finish(load(&common)?)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir().join(CHECKPOINT_FILE));
            let h = horizon.unwrap_or(cfg.horizons[0]);
            for r in pipeline::cmd_forecast(&cfg, &ckpt, h)? {
                println!("{}\t{}", r.step, r.value);
            }
        }
        Command::Explain { common, checkpoint, window_index } => {
            let cfg = finish(load(&common)?)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir().join(CHECKPOINT_FILE));
            let (_, s) = pipeline::cmd_explain(&cfg, &ckpt, window_index)?;
            println!(
                "window {}  prediction {:.4}  recency concentration {:.3}",
                s.window_index, s.prediction_raw, s.recency_concentration
            );
        }
        Command::Bench { common, runs, horizons } => {
            let mut cfg = load(&common)?;
            if let Some(r) = runs {
                cfg.bench.runs = r;
            }
            if let Some(h) = horizons {
                cfg.horizons = h;
            }
            let report = pipeline::cmd_bench(&finish(cfg)?)?;
            for h in &report.horizons {
                println!(
                    "h={:<3} model rmse {:.4} mape {:.4} | persistence rmse {:.4} mape {:.4}",
                    h.horizon, h.model.rmse, h.model.mape, h.persistence.rmse, h.persistence.mape
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
