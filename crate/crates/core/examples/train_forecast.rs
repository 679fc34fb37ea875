//! Train the default model on the synthetic series and roll a 15-step forecast
//! against the persistence baseline.

use cnn_tft::nn::ModelConfig;
use cnn_tft::pipeline::{load_series, Prepared, RunConfig};
use cnn_tft::train::{self, metrics, TrainConfig};

fn main() {
    let cfg = RunConfig::default();
    let prep = Prepared::new(load_series(&cfg).unwrap(), cfg.data.train_frac).unwrap();
    let model = ModelConfig::default();
    let data = prep.train_windows(model.window).unwrap();
    let tc = TrainConfig { epochs: 40, ..TrainConfig::default() };

    let out = train::train(&model, &tc, &data).expect("training");
    let h = &out.loss_history;
    println!("loss {:.5} -> {:.5} over {} epochs", h[0], h[h.len() - 1], h.len());

    let eval = train::rolling_origin(&out.params, &prep.scaler, prep.train.values(), prep.test.values(), 15, 1).unwrap();
    let m = metrics(&eval.actual, &eval.predicted).unwrap();
    let p = metrics(&eval.actual, &eval.persistence).unwrap();
    println!("horizon 15   model rmse {:.3} mape {:.2}%", m.rmse, 100.0 * m.mape);
    println!("       persistence rmse {:.3} mape {:.2}%", p.rmse, 100.0 * p.mape);

    let v = prep.series.values();
    let next = train::forecast_recursive(&out.params, &prep.scaler, &v[v.len() - model.window..], 5).unwrap();
    println!("next five days: {:?}", next.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>());
}
