//! Train a small model, build the SHAP x attention influence map for the last
//! test window and write it as an SVG figure.

use cnn_tft::explain::{explain, sample_background, ExplainConfig};
use cnn_tft::nn::ModelConfig;
use cnn_tft::pipeline::{load_series, svg, Prepared, RunConfig};
use cnn_tft::train::{self, TrainConfig};

fn main() {
    let cfg = RunConfig::default();
    let prep = Prepared::new(load_series(&cfg).unwrap(), 0.8).unwrap();
    let model = ModelConfig { window: 30, ..ModelConfig::default() };
    let data = prep.train_windows(model.window).unwrap();
    let params = train::train(&model, &TrainConfig { epochs: 20, ..TrainConfig::default() }, &data)
        .unwrap()
        .params;

    let ec = ExplainConfig::default();
    let background = sample_background(&data.inputs, ec.background_size, ec.seed);
    let raw = prep.test_windows(model.window).unwrap().pop().unwrap();
    let map = explain(&params, &prep.scaler.scale_all(&raw), &background, &ec).unwrap();

    println!("lag   shap      attention  smoothed");
    for j in (0..map.window()).rev() {
        let mark = if map.is_reported(j) { "" } else { "  (edge, not reported)" };
        println!("t-{:<3} {:+.5}  {:.4}     {:+.6}{mark}", map.lag_of(j), map.shap[j], map.attention[j], map.smoothed[j]);
    }
    println!("recency concentration over the last {} lags: {:.1}%", ec.recent_lags, 100.0 * map.recency_concentration);

    let path = std::env::temp_dir().join("influence_map.svg");
    std::fs::write(&path, svg::influence_figure(&raw, &map)).unwrap();
    println!("figure written to {}", path.display());
}
