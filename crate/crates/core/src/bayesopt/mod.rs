//! Bayesian optimization of the architecture hyperparameters: a Gaussian-process
//! surrogate over the unit hypercube, Expected Improvement acquisition, and a
//! sequential tuning loop that logs every trial.

mod acquisition;
mod gp;
mod space;

use std::collections::HashSet;
use std::fmt::Display;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use acquisition::{
    ei_minimizing, expected_improvement, propose, propose_refined, std_normal_cdf,
    std_normal_pdf, Proposal,
};
pub use gp::{
    cholesky, gp_fit, gp_posterior, gram, solve_lower, solve_upper_t, sq_exp_kernel,
    standardization, GpHyper, GpState, Observation, INITIAL_JITTER, MAX_JITTER,
};
pub use space::{Candidate, SearchSpace, DIMS};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("point has {found} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid GP hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("no observations to fit")]
    NoObservations,
    #[error("objective value {0} is not finite")]
    NonFiniteObjective(f64),
    #[error("kernel matrix is singular even with maximal jitter")]
    SingularKernel,
    #[error("empty search space: {0}")]
    EmptySpace(String),
    #[error("invalid tuning config: {0}")]
    InvalidConfig(String),
    #[error("every trial failed; last error: {0}")]
    AllTrialsFailed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub budget: usize,
    /// Space-filling trials before the first GP fit; `None` means `min(5, budget)`.
    pub init: Option<usize>,
    pub pool_size: usize,
    pub xi: f64,
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Pool members improved by local search on EI; 0 disables refinement.
    pub refine_starts: usize,
    /// When false, `wall_seconds` is logged as 0 so logs are byte-reproducible.
    pub record_time: bool,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            budget: 40,
            init: None,
            pool_size: 2048,
            xi: 0.01,
            length_scale: 1.0,
            signal_var: 1.0,
            noise_var: 1e-4,
            refine_starts: 4,
            record_time: false,
            seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn init_trials(&self) -> usize {
        self.init.unwrap_or(5.min(self.budget))
    }

    pub fn hyper(&self) -> GpHyper {
        GpHyper {
            signal_var: self.signal_var,
            length_scales: vec![self.length_scale; DIMS],
            noise_var: self.noise_var,
        }
    }

    pub fn validate(&self) -> Result<(), BoError> {
        let init = self.init_trials();
        if self.budget == 0 || init == 0 || init > self.budget {
            return Err(BoError::InvalidConfig(format!(
                "need budget >= init >= 1, got budget {} init {init}",
                self.budget
            )));
        }
        if self.pool_size == 0 {
            return Err(BoError::InvalidConfig("pool_size must be positive".into()));
        }
        if !(self.xi >= 0.0) {
            return Err(BoError::InvalidConfig("xi must be non-negative".into()));
        }
        self.hyper().validate()
    }
}

/// One evaluated trial. Failed trials carry the worst objective seen so far as
/// a penalty, or NaN if nothing had succeeded yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// 1-based trial number.
    pub trial: usize,
    pub candidate: Candidate,
    pub objective: f64,
    pub failed: bool,
    pub best_so_far: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Candidate,
    pub best_objective: f64,
    pub trials: Vec<TrialRecord>,
}

impl TuneResult {
    /// Best-so-far objective after each trial.
    pub fn incumbent_curve(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.best_so_far).collect()
    }
}

/// Latin hypercube sample of `n` points in `[0, 1]^dims`.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dims]; n];
    for d in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Minimizes `objective` over the grid of `space`. The first trials are a
/// seeded Latin hypercube; every later trial refits the GP on all successful
/// observations and evaluates the EI maximizer among not-yet-evaluated points.
pub fn tune<F, E>(mut objective: F, space: &SearchSpace, cfg: &TuneConfig) -> Result<TuneResult, BoError>
where
    F: FnMut(&Candidate) -> Result<f64, E>,
    E: Display,
{
    space.validate()?;
    cfg.validate()?;
    let hyper = cfg.hyper();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = latin_hypercube(cfg.init_trials(), DIMS, &mut rng);

    let mut observations: Vec<Observation> = Vec::new();
    let mut seen: HashSet<Candidate> = HashSet::new();
    let mut trials: Vec<TrialRecord> = Vec::with_capacity(cfg.budget);
    let mut best: Option<(Candidate, f64)> = None;
    let mut worst = f64::NEG_INFINITY;
    let mut last_error = String::new();

    for t in 0..cfg.budget {
        let candidate = if t < init.len() {
            space.from_unit(&init[t])
        } else if observations.is_empty() {
            space.from_unit(&(0..DIMS).map(|_| rng.random::<f64>()).collect::<Vec<_>>())
        } else {
            let state = gp_fit(&observations, &hyper)?;
            if cfg.refine_starts > 0 {
                propose_refined(&state, space, cfg.pool_size, cfg.xi, &seen, cfg.refine_starts, &mut rng)?
                    .candidate
            } else {
                propose(&state, space, cfg.pool_size, cfg.xi, &mut rng)?.candidate
            }
        };

        let started = Instant::now();
        let outcome = match objective(&candidate) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(format!("objective returned {v}")),
            Err(e) => Err(e.to_string()),
        };
        let wall_seconds = if cfg.record_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };

        let (value, failed) = match outcome {
            Ok(v) => {
                worst = worst.max(v);
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((candidate, v));
                }
                (v, false)
            }
            Err(e) => {
                last_error = format!("trial {}: {e}", t + 1);
                (if worst.is_finite() { worst } else { f64::NAN }, true)
            }
        };
        if value.is_finite() {
            observations.push(Observation {
                x: space.to_unit(&candidate),
                y: value,
            });
        }
        seen.insert(candidate);
        trials.push(TrialRecord {
            trial: t + 1,
            candidate,
            objective: value,
            failed,
            best_so_far: best.map_or(f64::INFINITY, |(_, b)| b),
            wall_seconds,
        });
    }

    let (best, best_objective) = best.ok_or(BoError::AllTrialsFailed(last_error))?;
    Ok(TuneResult {
        best,
        best_objective,
        trials,
    })
}
