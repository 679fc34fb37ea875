//! Repeat a short training run over several seeds and summarize test RMSE the
//! way the benchmark command does.

use cnn_tft::nn::ModelConfig;
use cnn_tft::pipeline::{load_series, Prepared, RunConfig};
use cnn_tft::train::{self, box_summary, rmse, run_stats, TrainConfig};

fn main() {
    let cfg = RunConfig::default();
    let prep = Prepared::new(load_series(&cfg).unwrap(), 0.8).unwrap();
    let data = prep.train_windows(15).unwrap();

    let scores: Vec<f64> = (0..8u64)
        .map(|seed| {
            let model = ModelConfig { seed, ..ModelConfig::default() };
            let tc = TrainConfig { epochs: 10, seed, ..TrainConfig::default() };
            let params = train::train(&model, &tc, &data).unwrap().params;
            let ev = train::evaluate_one_step(&params, &prep.scaler, prep.train.values(), prep.test.values()).unwrap();
            let r = rmse(&ev.actual, &ev.predicted).unwrap();
            println!("seed {seed}: test rmse {r:.4}");
            r
        })
        .collect();

    let s = run_stats(&scores).unwrap();
    println!(
        "mean {:.4} std {:.4} median {:.4} IQR {:.4} skew {:.3} kurtosis {:.3}",
        s.mean, s.std, s.median, s.iqr, s.skewness, s.excess_kurtosis
    );
    let b = box_summary(&scores).unwrap();
    println!("whiskers [{:.4}, {:.4}], outliers {:?}", b.lower_whisker, b.upper_whisker, b.outliers);
}
