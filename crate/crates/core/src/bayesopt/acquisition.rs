//! Expected Improvement and candidate selection over the integer grid.

use std::collections::HashSet;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use statrs::function::erf::erfc;

use super::gp::GpState;
use super::space::{Candidate, SearchSpace, DIMS};
use super::BoError;

pub fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(u: f64) -> f64 {
    0.5 * erfc(-u * FRAC_1_SQRT_2)
}

/// Expected Improvement for maximization, `sigma (u Phi(u) + phi(u))` with
/// `u = (mu - f_plus - xi) / sigma`. Defined as 0 when `sigma == 0`.
pub fn expected_improvement(mu: f64, sigma: f64, f_plus: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    let u = (mu - f_plus - xi) / sigma;
    (sigma * (u * std_normal_cdf(u) + std_normal_pdf(u))).max(0.0)
}

/// EI of a minimization objective at `x`, evaluated on the GP's standardized
/// scale by negating mean and incumbent.
pub fn ei_minimizing(state: &GpState, x: &[f64], xi: f64) -> Result<f64, BoError> {
    let (mu, var) = state.posterior_standardized(x)?;
    let best = state
        .observations
        .iter()
        .map(|o| o.y)
        .fold(f64::INFINITY, f64::min);
    let best_std = (best - state.y_mean) / state.y_std;
    Ok(expected_improvement(-mu, var.max(0.0).sqrt(), -best_std, xi))
}

/// The winning candidate of an acquisition search.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub candidate: Candidate,
    /// Grid point in the unit hypercube.
    pub x: Vec<f64>,
    pub ei: f64,
    /// Index of the pool member the search started from.
    pub pool_index: usize,
}

/// Draws `pool_size` uniform points, rounds each onto the grid and returns the
/// one with the largest EI. Ties go to the lowest pool index.
pub fn propose<R: Rng + ?Sized>(
    state: &GpState,
    space: &SearchSpace,
    pool_size: usize,
    xi: f64,
    rng: &mut R,
) -> Result<Proposal, BoError> {
    let pool = draw_pool(space, pool_size, rng)?;
    let scores = score(state, &pool, xi)?;
    let (i, ei) = argmax(&scores).expect("non-empty pool");
    Ok(Proposal {
        candidate: space.from_unit(&pool[i]),
        x: pool[i].clone(),
        ei,
        pool_index: i,
    })
}

/// Like [`propose`], but skips grid points in `exclude` and then improves the
/// best few pool members by integer pattern search on EI. The result has EI at
/// least as large as every non-excluded pool member.
pub fn propose_refined<R: Rng + ?Sized>(
    state: &GpState,
    space: &SearchSpace,
    pool_size: usize,
    xi: f64,
    exclude: &HashSet<Candidate>,
    starts: usize,
    rng: &mut R,
) -> Result<Proposal, BoError> {
    let pool = draw_pool(space, pool_size, rng)?;
    let scores = score(state, &pool, xi)?;
    let mut order: Vec<usize> = (0..pool.len())
        .filter(|&i| !exclude.contains(&space.from_unit(&pool[i])))
        .collect();
    if order.is_empty() {
        let (i, ei) = argmax(&scores).expect("non-empty pool");
        return Ok(Proposal {
            candidate: space.from_unit(&pool[i]),
            x: pool[i].clone(),
            ei,
            pool_index: i,
        });
    }
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut seeds: Vec<(usize, Candidate)> = order
        .iter()
        .take(starts.max(1))
        .map(|&i| (i, space.from_unit(&pool[i])))
        .collect();
    // the incumbent's neighbourhood is always searched as well
    if let Some(best) = state
        .observations
        .iter()
        .min_by(|a, b| a.y.total_cmp(&b.y))
    {
        seeds.push((order[0], space.from_unit(&best.x)));
    }

    let mut winner = Proposal {
        candidate: space.from_unit(&pool[order[0]]),
        x: pool[order[0]].clone(),
        ei: scores[order[0]],
        pool_index: order[0],
    };
    for (idx, start) in seeds {
        let (c, ei) = pattern_search(state, space, start, xi, exclude)?;
        if ei > winner.ei && !exclude.contains(&c) {
            winner = Proposal {
                candidate: c,
                x: space.to_unit(&c),
                ei,
                pool_index: idx,
            };
        }
    }
    Ok(winner)
}

fn draw_pool<R: Rng + ?Sized>(
    space: &SearchSpace,
    pool_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, BoError> {
    space.validate()?;
    if pool_size == 0 {
        return Err(BoError::EmptySpace("candidate pool is empty".into()));
    }
    Ok((0..pool_size)
        .map(|_| {
            let u: Vec<f64> = (0..DIMS).map(|_| rng.random::<f64>()).collect();
            space.snap(&u)
        })
        .collect())
}

fn score(state: &GpState, pool: &[Vec<f64>], xi: f64) -> Result<Vec<f64>, BoError> {
    pool.iter().map(|x| ei_minimizing(state, x, xi)).collect()
}

fn argmax(scores: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// Coordinate pattern search on the grid with step sizes shrinking by halves
/// down to 1. Excluded points are stepped over but never returned as improvements.
fn pattern_search(
    state: &GpState,
    space: &SearchSpace,
    start: Candidate,
    xi: f64,
    exclude: &HashSet<Candidate>,
) -> Result<(Candidate, f64), BoError> {
    let ranges = space.ranges();
    let mut cur = start;
    let mut cur_ei = if exclude.contains(&cur) {
        f64::NEG_INFINITY
    } else {
        ei_minimizing(state, &space.to_unit(&cur), xi)?
    };
    let mut step: Vec<usize> = ranges
        .iter()
        .map(|(lo, hi)| ((hi - lo) / 4).max(1).next_power_of_two())
        .collect();
    for _ in 0..500 {
        let mut moved = false;
        for d in 0..DIMS {
            let (lo, hi) = ranges[d];
            let v = cur.as_array()[d];
            for cand_v in [v.saturating_sub(step[d]).max(lo), (v + step[d]).min(hi)] {
                if cand_v == v {
                    continue;
                }
                let mut arr = cur.as_array();
                arr[d] = cand_v;
                let c = Candidate::from_array(arr);
                if exclude.contains(&c) {
                    continue;
                }
                let ei = ei_minimizing(state, &space.to_unit(&c), xi)?;
                if ei > cur_ei {
                    cur = c;
                    cur_ei = ei;
                    moved = true;
                }
            }
        }
        if !moved {
            if step.iter().all(|&s| s == 1) {
                break;
            }
            for s in step.iter_mut() {
                *s = (*s / 2).max(1);
            }
        }
    }
    Ok((cur, cur_ei))
}
