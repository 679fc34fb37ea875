//! Generate the seasonal benchmark series, split it, and window it for training.

use cnn_tft::series::{apply, fit_scaler, make_windows, split, synthesize, SynthSpec};

fn main() {
    let spec = SynthSpec::default();
    let ts = synthesize(&spec).expect("valid spec");
    let (train, test) = split(&ts, 0.8).expect("split");
    let scaler = fit_scaler(&train).expect("non-constant training segment");
    let data = make_windows(&apply(&train, &scaler), 15).expect("windows");

    let v = ts.values();
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    println!("{} daily values from {}, range [{lo:.1}, {hi:.1}]", ts.len(), ts.timestamps()[0]);
    println!("train {} / test {}", train.len(), test.len());
    println!("scaler mean {:.3} std {:.3}", scaler.mean, scaler.std);
    println!("{} supervised windows of width {}", data.inputs.len(), data.window);
    println!("first target {:.4} (scaled)", data.targets[0]);
}
