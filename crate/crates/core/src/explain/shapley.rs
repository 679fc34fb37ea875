//! Shapley attributions of a window-to-scalar function over its lags. Absent
//! lags take their values from background windows and the coalition value is
//! the mean output over the background set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExplainError;

/// Largest window handled by exact enumeration (`2^w` coalitions).
pub const MAX_EXACT_WINDOW: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapResult {
    /// Per-lag attribution, oldest lag first, in model output units.
    pub values: Vec<f64>,
    /// Mean model output over the background set.
    pub base_value: f64,
    /// Model output on the explained window.
    pub prediction: f64,
}

impl ShapResult {
    /// `prediction - (base_value + sum(values))`.
    pub fn additivity_gap(&self) -> f64 {
        self.prediction - (self.base_value + self.values.iter().sum::<f64>())
    }
}

fn check_inputs(x: &[f64], background: &[Vec<f64>]) -> Result<(), ExplainError> {
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    if let Some(b) = background.iter().find(|b| b.len() != x.len()) {
        return Err(ExplainError::LengthMismatch(x.len(), b.len()));
    }
    if x.is_empty() {
        return Err(ExplainError::InvalidConfig("empty window".into()));
    }
    Ok(())
}

/// Mean of `f` over composites that take `x` where `mask` is set and the
/// background window elsewhere.
fn coalition_value<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    background: &[Vec<f64>],
    mask: &[bool],
    buf: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    for b in background {
        for i in 0..x.len() {
            buf[i] = if mask[i] { x[i] } else { b[i] };
        }
        total += f(buf);
    }
    total / background.len() as f64
}

/// Exact Shapley values via the coalition formula
/// `s_i = sum_{S not containing i} |S|! (w - |S| - 1)! / w! (v(S + i) - v(S))`.
pub fn shap_exact<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<ShapResult, ExplainError> {
    check_inputs(x, background)?;
    let w = x.len();
    if w > MAX_EXACT_WINDOW {
        return Err(ExplainError::WindowTooLargeForExact(w));
    }
    let n_masks = 1usize << w;
    let mut buf = vec![0.0; w];
    let mut mask = vec![false; w];
    let values: Vec<f64> = (0..n_masks)
        .map(|m| {
            for (i, bit) in mask.iter_mut().enumerate() {
                *bit = m >> i & 1 == 1;
            }
            coalition_value(&f, x, background, &mask, &mut buf)
        })
        .collect();

    let mut fact = vec![1.0f64; w + 1];
    for i in 1..=w {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..w).map(|s| fact[s] * fact[w - s - 1] / fact[w]).collect();

    let mut s = vec![0.0; w];
    for m in 0..n_masks {
        let size = m.count_ones() as usize;
        for (i, si) in s.iter_mut().enumerate() {
            if m >> i & 1 == 0 {
                *si += weight[size] * (values[m | 1 << i] - values[m]);
            }
        }
    }
    Ok(ShapResult {
        values: s,
        base_value: values[0],
        prediction: values[n_masks - 1],
    })
}

/// Antithetic permutation sampling: `permutations` seeded orders, each also
/// walked in reverse, averaging marginal contributions. The remaining
/// additivity gap is spread over lags in proportion to `|s_i|` (evenly when
/// all estimates are zero).
pub fn shap_sampled<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    background: &[Vec<f64>],
    permutations: usize,
    seed: u64,
) -> Result<ShapResult, ExplainError> {
    check_inputs(x, background)?;
    if permutations == 0 {
        return Err(ExplainError::InvalidConfig("permutations must be at least 1".into()));
    }
    let w = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; w];
    let base_value = coalition_value(&f, x, background, &vec![false; w], &mut buf);
    let prediction = f(x);

    let mut s = vec![0.0; w];
    let mut order: Vec<usize> = (0..w).collect();
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        for pass in 0..2 {
            let mut mask = vec![false; w];
            let mut prev = base_value;
            for k in 0..w {
                let i = if pass == 0 { order[k] } else { order[w - 1 - k] };
                mask[i] = true;
                let v = if k + 1 == w {
                    prediction
                } else {
                    coalition_value(&f, x, background, &mask, &mut buf)
                };
                s[i] += v - prev;
                prev = v;
            }
        }
    }
    let passes = (2 * permutations) as f64;
    for v in s.iter_mut() {
        *v /= passes;
    }

    let gap = prediction - base_value - s.iter().sum::<f64>();
    let total_abs: f64 = s.iter().map(|v| v.abs()).sum();
    if total_abs > 0.0 {
        let share: Vec<f64> = s.iter().map(|v| v.abs() / total_abs).collect();
        for (v, p) in s.iter_mut().zip(share) {
            *v += gap * p;
        }
    } else {
        for v in s.iter_mut() {
            *v += gap / w as f64;
        }
    }
    Ok(ShapResult {
        values: s,
        base_value,
        prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_background(n: usize, w: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Shapley values as the average marginal contribution over every ordering.
    fn permutation_oracle<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], bg: &[Vec<f64>]) -> Vec<f64> {
        fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k == 1 {
                out.push(a.clone());
                return;
            }
            for i in 0..k {
                heap(k - 1, a, out);
                if k % 2 == 0 {
                    a.swap(i, k - 1);
                } else {
                    a.swap(0, k - 1);
                }
            }
        }
        let w = x.len();
        let mut perms = Vec::new();
        heap(w, &mut (0..w).collect(), &mut perms);
        let value = |present: &[usize]| {
            bg.iter()
                .map(|b| {
                    let z: Vec<f64> = (0..w)
                        .map(|i| if present.contains(&i) { x[i] } else { b[i] })
                        .collect();
                    f(&z)
                })
                .sum::<f64>()
                / bg.len() as f64
        };
        let mut s = vec![0.0; w];
        for p in &perms {
            for k in 0..w {
                s[p[k]] += value(&p[..=k]) - value(&p[..k]);
            }
        }
        s.iter().map(|v| v / perms.len() as f64).collect()
    }

    fn nonlinear(z: &[f64]) -> f64 {
        let h: f64 = z.iter().enumerate().map(|(i, v)| (v * (i as f64 + 1.0)).tanh()).sum();
        (h * z[0]).sin() + z[z.len() - 1] * z[1]
    }

    #[test]
    fn linear_game() {
        let x = [0.5, -1.0, 2.0, 3.0];
        let r = shap_exact(|z: &[f64]| z.iter().sum(), &x, &[vec![0.0; 4]]).unwrap();
        assert_eq!(r.base_value, 0.0);
        for (s, xi) in r.values.iter().zip(&x) {
            assert!((s - xi).abs() < 1e-12);
        }
        let r = shap_sampled(|z: &[f64]| z.iter().sum(), &x, &[vec![0.0; 4]], 3, 1).unwrap();
        for (s, xi) in r.values.iter().zip(&x) {
            assert!((s - xi).abs() < 1e-12);
        }
    }

    #[test]
    fn null_game() {
        let bg = random_background(5, 5, 1);
        let r = shap_exact(|_: &[f64]| 4.2, &[1.0; 5], &bg).unwrap();
        assert!(r.values.iter().all(|v| *v == 0.0));
        assert_eq!(r.base_value, 4.2);
    }

    #[test]
    fn exact_matches_permutation_oracle() {
        let bg = random_background(6, 4, 2);
        let x = [0.3, -0.7, 1.1, 0.2];
        let r = shap_exact(nonlinear, &x, &bg).unwrap();
        let oracle = permutation_oracle(&nonlinear, &x, &bg);
        for (a, b) in r.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(r.additivity_gap().abs() < 1e-9);
    }

    #[test]
    fn symmetric_and_null_players() {
        // lags 1 and 2 enter symmetrically; lag 3 is ignored
        let f = |z: &[f64]| (z[1] * z[2]).exp() + z[0] * z[0];
        let bg = vec![vec![0.1, 0.4, 0.4, -2.0], vec![-0.3, -0.2, -0.2, 5.0]];
        let r = shap_exact(f, &[1.0, 0.7, 0.7, 9.0], &bg).unwrap();
        assert!((r.values[1] - r.values[2]).abs() < 1e-9);
        assert!(r.values[3].abs() < 1e-9);
    }

    #[test]
    fn exact_rejects_wide_windows() {
        let bg = vec![vec![0.0; 13]];
        assert!(matches!(
            shap_exact(|z: &[f64]| z[0], &[0.0; 13], &bg),
            Err(ExplainError::WindowTooLargeForExact(13))
        ));
        assert!(matches!(
            shap_exact(|z: &[f64]| z[0], &[0.0; 3], &[]),
            Err(ExplainError::EmptyBackground)
        ));
    }

    #[test]
    fn sampled_converges_and_is_additive() {
        let bg = random_background(8, 6, 3);
        let x = [0.9, -0.4, 0.1, 0.6, -1.0, 0.3];
        let exact = shap_exact(nonlinear, &x, &bg).unwrap();
        let max_abs = exact.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut errs = Vec::new();
        for m in [50, 500, 2000] {
            let r = shap_sampled(nonlinear, &x, &bg, m, 7).unwrap();
            assert!(r.additivity_gap().abs() < 1e-9);
            let mae = r.values.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).sum::<f64>() / 6.0;
            errs.push(mae);
        }
        assert!(errs[2] < 0.05 * max_abs, "{errs:?}");
        assert!(errs[2] < errs[0]);
    }

    #[test]
    fn sampled_is_deterministic() {
        let bg = random_background(4, 5, 9);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let a = shap_sampled(nonlinear, &x, &bg, 20, 3).unwrap();
        let b = shap_sampled(nonlinear, &x, &bg, 20, 3).unwrap();
        assert_eq!(a, b);
    }
}
