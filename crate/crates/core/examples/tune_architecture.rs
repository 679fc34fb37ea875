//! Bayesian optimization of the architecture on validation RMSE, on a
//! shortened series and a narrow search space so it finishes quickly.

use cnn_tft::bayesopt::{tune, Candidate, SearchSpace, TuneConfig};
use cnn_tft::pipeline::{load_series, validation_rmse, Prepared, RunConfig};

fn main() {
    let mut cfg = RunConfig::default();
    cfg.data.synth.length = 800;
    let prep = Prepared::new(load_series(&cfg).unwrap(), 0.8).unwrap();
    let space = SearchSpace {
        cnn_layers: (1, 3),
        heads: (1, 3),
        filters: (4, 24),
        kernel_size: (2, 4),
    };
    let search = TuneConfig { budget: 12, ..TuneConfig::default() };

    let objective = |c: &Candidate| validation_rmse(&prep, &c.apply(&cfg.model), &cfg.train, 5, 0.2);
    let result = tune(objective, &space, &search).expect("tuning");
    for t in &result.trials {
        println!("{:>3}  {:<44} rmse {:.4}  best {:.4}", t.trial, t.candidate.to_string(), t.objective, t.best_so_far);
    }
    println!("best: {} ({:.4})", result.best, result.best_objective);
}
