//! Exact and sampled Shapley attributions on a small hand-written model.

use cnn_tft::explain::{shap_exact, shap_sampled};

fn main() {
    // the newest lag dominates; two middle lags interact, three lags saturate together
    let f = |z: &[f64]| 2.0 * z[5] + z[2] * z[3] + 0.1 * z[0] + (z[1] + z[4] * z[5]).tanh();
    let x = [1.0, 0.4, -0.8, 1.5, 0.3, 2.0];
    let background: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 5) as f64 * 0.25 - 0.5).collect())
        .collect();

    let exact = shap_exact(f, &x, &background).unwrap();
    println!("base {:.4}  prediction {:.4}", exact.base_value, exact.prediction);
    for m in [10, 100, 1000] {
        let s = shap_sampled(f, &x, &background, m, 7).unwrap();
        let err = s.values.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("m = {m:>4}: max deviation from exact {err:.5}");
    }
    for (j, v) in exact.values.iter().enumerate() {
        println!("t-{}  {v:+.4}", 6 - j);
    }
}
