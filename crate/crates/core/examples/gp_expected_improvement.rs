//! Minimize a 1-D function with a GP surrogate and Expected Improvement.

use cnn_tft::bayesopt::{ei_minimizing, gp_fit, gp_posterior, GpHyper, Observation};

fn objective(x: f64) -> f64 {
    (3.0 * x).sin() + 0.5 * (x - 0.6).powi(2) * 10.0
}

fn main() {
    let hyper = GpHyper::isotropic(1, 0.15);
    let mut obs: Vec<Observation> = [0.05, 0.5, 0.95]
        .iter()
        .map(|&x| Observation { x: vec![x], y: objective(x) })
        .collect();
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();

    for step in 0..8 {
        let state = gp_fit(&obs, &hyper).unwrap();
        let (x_next, ei) = grid
            .iter()
            .map(|&x| (x, ei_minimizing(&state, &[x], 0.01).unwrap()))
            .fold((0.0, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        let (mu, var) = gp_posterior(&state, &[x_next]).unwrap();
        let y = objective(x_next);
        println!("step {step}: x {x_next:.3}  EI {ei:.4}  predicted {mu:.3} +/- {:.3}  observed {y:.3}", var.sqrt());
        obs.push(Observation { x: vec![x_next], y });
    }
    let best = obs.iter().min_by(|a, b| a.y.total_cmp(&b.y)).unwrap();
    println!("best x {:.3} f {:.4}", best.x[0], best.y);
}
