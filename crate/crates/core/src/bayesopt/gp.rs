//! Gaussian-process regression with a squared-exponential kernel, factorized by
//! a hand-written Cholesky decomposition.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::BoError;

/// Kernel hyperparameters: signal variance, per-dimension length-scales and
/// observation noise variance, all on standardized targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn isotropic(dims: usize, length_scale: f64) -> Self {
        Self {
            signal_var: 1.0,
            length_scales: vec![length_scale; dims],
            noise_var: 1e-4,
        }
    }

    pub fn dims(&self) -> usize {
        self.length_scales.len()
    }

    pub fn validate(&self) -> Result<(), BoError> {
        let ok = self.signal_var > 0.0
            && self.noise_var >= 0.0
            && self.noise_var.is_finite()
            && !self.length_scales.is_empty()
            && self.length_scales.iter().all(|l| *l > 0.0 && l.is_finite());
        if ok {
            Ok(())
        } else {
            Err(BoError::InvalidHyper(format!("{self:?}")))
        }
    }
}

pub const INITIAL_JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-4;

/// `k(x, x') = s^2 exp(-1/2 sum_d ((x_d - x'_d) / l_d)^2)`.
pub fn sq_exp_kernel(x: &[f64], x2: &[f64], hyper: &GpHyper) -> Result<f64, BoError> {
    if x.len() != x2.len() || x.len() != hyper.dims() {
        return Err(BoError::DimensionMismatch {
            expected: hyper.dims(),
            found: if x.len() != hyper.dims() { x.len() } else { x2.len() },
        });
    }
    Ok(kernel_unchecked(x, x2, hyper))
}

fn kernel_unchecked(x: &[f64], x2: &[f64], hyper: &GpHyper) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(&hyper.length_scales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    hyper.signal_var * (-0.5 * r2).exp()
}

/// One evaluated point of the search: `x` in the unit hypercube, `y` the
/// objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

/// A fitted GP: the factor `L L^T = K + (noise + jitter) I` and
/// `alpha = (K + (noise + jitter) I)^-1 y_std`.
#[derive(Debug, Clone)]
pub struct GpState {
    pub observations: Vec<Observation>,
    pub hyper: GpHyper,
    pub chol: Array2<f64>,
    pub alpha: Array1<f64>,
    /// Jitter that made the factorization succeed.
    pub jitter: f64,
    pub y_mean: f64,
    pub y_std: f64,
}

/// Lower-triangular Cholesky factor, or `None` if a pivot is not positive.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / ljj;
        }
    }
    Some(l)
}

/// Solves `L z = b` for lower-triangular `L`.
pub fn solve_lower(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[[i, k]] * z[k];
        }
        z[i] = v / l[[i, i]];
    }
    z
}

/// Solves `L^T z = b` for lower-triangular `L`.
pub fn solve_upper_t(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= l[[k, i]] * z[k];
        }
        z[i] = v / l[[i, i]];
    }
    z
}

/// Gram matrix `K_ij = k(x_i, x_j)` without the noise term.
pub fn gram(observations: &[Observation], hyper: &GpHyper) -> Array2<f64> {
    let n = observations.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        kernel_unchecked(&observations[i].x, &observations[j].x, hyper)
    })
}

/// Standardization applied to targets before fitting: population mean and
/// std, with std replaced by 1 when the targets are constant.
pub fn standardization(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

pub fn gp_fit(observations: &[Observation], hyper: &GpHyper) -> Result<GpState, BoError> {
    hyper.validate()?;
    if observations.is_empty() {
        return Err(BoError::NoObservations);
    }
    for o in observations {
        if o.x.len() != hyper.dims() {
            return Err(BoError::DimensionMismatch {
                expected: hyper.dims(),
                found: o.x.len(),
            });
        }
        if !o.y.is_finite() {
            return Err(BoError::NonFiniteObjective(o.y));
        }
    }
    let ys: Vec<f64> = observations.iter().map(|o| o.y).collect();
    let (y_mean, y_std) = standardization(&ys);
    let y_s: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_std).collect();

    let k = gram(observations, hyper);
    let mut jitter = INITIAL_JITTER;
    let chol = loop {
        let mut a = k.clone();
        for i in 0..a.nrows() {
            a[[i, i]] += hyper.noise_var + jitter;
        }
        if let Some(l) = cholesky(&a) {
            break l;
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(BoError::SingularKernel);
        }
    };
    let alpha = solve_upper_t(&chol, &solve_lower(&chol, &y_s));
    Ok(GpState {
        observations: observations.to_vec(),
        hyper: hyper.clone(),
        chol,
        alpha: Array1::from(alpha),
        jitter,
        y_mean,
        y_std,
    })
}

impl GpState {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Posterior mean and variance in standardized units, variance not clamped.
    pub fn posterior_standardized(&self, x: &[f64]) -> Result<(f64, f64), BoError> {
        if x.len() != self.hyper.dims() {
            return Err(BoError::DimensionMismatch {
                expected: self.hyper.dims(),
                found: x.len(),
            });
        }
        let k_star: Vec<f64> = self
            .observations
            .iter()
            .map(|o| kernel_unchecked(x, &o.x, &self.hyper))
            .collect();
        let mean: f64 = k_star.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = solve_lower(&self.chol, &k_star);
        let var = self.hyper.signal_var - v.iter().map(|t| t * t).sum::<f64>();
        Ok((mean, var))
    }
}

/// Posterior `(mu, sigma^2)` at `x` in objective units, variance clamped at 0.
pub fn gp_posterior(state: &GpState, x: &[f64]) -> Result<(f64, f64), BoError> {
    let (m, v) = state.posterior_standardized(x)?;
    Ok((
        state.y_mean + state.y_std * m,
        state.y_std * state.y_std * v.max(0.0),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_obs(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Observation> {
        (0..n)
            .map(|_| Observation {
                x: (0..d).map(|_| rng.random::<f64>()).collect(),
                y: rng.random_range(-3.0..5.0),
            })
            .collect()
    }

    #[test]
    fn kernel_values() {
        let h = GpHyper { signal_var: 2.5, length_scales: vec![1.0], noise_var: 0.0 };
        assert_eq!(sq_exp_kernel(&[0.3], &[0.3], &h).unwrap(), 2.5);
        let h = GpHyper { signal_var: 1.0, length_scales: vec![1.0], noise_var: 0.0 };
        let k = sq_exp_kernel(&[0.0], &[2f64.sqrt()], &h).unwrap();
        assert!((k - (-1f64).exp()).abs() < 1e-15);
        assert!((k - 0.36788).abs() < 1e-5);
        assert!(matches!(
            sq_exp_kernel(&[0.0, 1.0], &[0.0], &h),
            Err(BoError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_symmetry_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = GpHyper::isotropic(3, 0.3);
        for _ in 0..200 {
            let a: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            let kab = sq_exp_kernel(&a, &b, &h).unwrap();
            let kba = sq_exp_kernel(&b, &a, &h).unwrap();
            assert!((kab - kba).abs() <= 1e-15);
            assert!(kab > 0.0 && kab <= h.signal_var);
        }
    }

    #[test]
    fn single_observation_factor() {
        let h = GpHyper { signal_var: 1.3, length_scales: vec![0.2, 0.2], noise_var: 1e-4 };
        let s = gp_fit(&[Observation { x: vec![0.1, 0.9], y: 4.0 }], &h).unwrap();
        assert_eq!(s.chol.dim(), (1, 1));
        assert!((s.chol[[0, 0]] - (1.3 + 1e-4 + INITIAL_JITTER).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn duplicates_rescued_by_jitter() {
        let h = GpHyper { signal_var: 1.0, length_scales: vec![0.2], noise_var: 0.0 };
        let obs = vec![
            Observation { x: vec![0.5], y: 1.0 },
            Observation { x: vec![0.5], y: 1.0 },
            Observation { x: vec![0.2], y: 0.0 },
        ];
        let s = gp_fit(&obs, &h).unwrap();
        assert!(s.jitter >= INITIAL_JITTER && s.jitter <= MAX_JITTER);
        assert!(s.alpha.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn factor_reconstructs_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = GpHyper::isotropic(4, 0.2);
        let obs = random_obs(5, 4, &mut rng);
        let s = gp_fit(&obs, &h).unwrap();
        let llt = s.chol.dot(&s.chol.t());
        for i in 0..5 {
            for j in 0..5 {
                let mut direct = sq_exp_kernel(&obs[i].x, &obs[j].x, &h).unwrap();
                if i == j {
                    direct += h.noise_var + s.jitter;
                }
                assert!((llt[[i, j]] - direct).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noiseless_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = GpHyper { noise_var: 0.0, ..GpHyper::isotropic(2, 0.3) };
        let obs = random_obs(8, 2, &mut rng);
        let s = gp_fit(&obs, &h).unwrap();
        for o in &obs {
            let (mu, var) = gp_posterior(&s, &o.x).unwrap();
            assert!((mu - o.y).abs() <= 1e-6 * s.y_std, "{mu} vs {}", o.y);
            assert!(var <= 1e-6 * h.signal_var * s.y_std * s.y_std);
        }
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = GpHyper::isotropic(2, 0.2);
        let obs = random_obs(6, 2, &mut rng);
        let s = gp_fit(&obs, &h).unwrap();
        let (mu, var) = gp_posterior(&s, &[50.0, -50.0]).unwrap();
        assert!((mu - s.y_mean).abs() <= 1e-6 * s.y_std);
        let prior = h.signal_var * s.y_std * s.y_std;
        assert!((var - prior).abs() <= 1e-6 * prior);
    }

    #[test]
    fn matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let h = GpHyper::isotropic(3, 0.4);
        for _ in 0..10 {
            let obs = random_obs(6, 3, &mut rng);
            let s = gp_fit(&obs, &h).unwrap();
            let n = obs.len();
            let (ym, ys) = standardization(&obs.iter().map(|o| o.y).collect::<Vec<_>>());
            let kernel = |a: &[f64], b: &[f64]| {
                let r2: f64 = a.iter().zip(b).map(|(p, q)| ((p - q) / 0.4).powi(2)).sum();
                (-0.5 * r2).exp()
            };
            let k = DMatrix::from_fn(n, n, |i, j| {
                kernel(&obs[i].x, &obs[j].x) + if i == j { h.noise_var + s.jitter } else { 0.0 }
            });
            let kinv = k.try_inverse().unwrap();
            let y = DVector::from_fn(n, |i, _| (obs[i].y - ym) / ys);
            for _ in 0..5 {
                let q: Vec<f64> = (0..3).map(|_| rng.random()).collect();
                let ks = DVector::from_fn(n, |i, _| kernel(&q, &obs[i].x));
                let mu = ym + ys * (ks.transpose() * &kinv * &y)[(0, 0)];
                let var = ys * ys * (1.0 - (ks.transpose() * &kinv * &ks)[(0, 0)]);
                let (m2, v2) = gp_posterior(&s, &q).unwrap();
                assert!((mu - m2).abs() < 1e-8, "{mu} {m2}");
                assert!((var.max(0.0) - v2).abs() < 1e-8, "{var} {v2}");
            }
        }
    }

    #[test]
    fn more_data_never_increases_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = GpHyper::isotropic(2, 0.3);
        for _ in 0..20 {
            let obs = random_obs(7, 2, &mut rng);
            let q: Vec<f64> = (0..2).map(|_| rng.random()).collect();
            let small = gp_fit(&obs[..6], &h).unwrap();
            let big = gp_fit(&obs, &h).unwrap();
            let (_, v_small) = small.posterior_standardized(&q).unwrap();
            let (_, v_big) = big.posterior_standardized(&q).unwrap();
            assert!(v_big <= v_small + 1e-8, "{v_big} > {v_small}");
        }
    }

    #[test]
    fn negative_variance_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = GpHyper { noise_var: 0.0, ..GpHyper::isotropic(2, 0.5) };
        for _ in 0..20 {
            let obs = random_obs(10, 2, &mut rng);
            let s = gp_fit(&obs, &h).unwrap();
            for o in &obs {
                let (_, v) = s.posterior_standardized(&o.x).unwrap();
                assert!(v > -1e-8 * h.signal_var);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let h = GpHyper::isotropic(1, 0.2);
        assert!(matches!(gp_fit(&[], &h), Err(BoError::NoObservations)));
        let bad = GpHyper { signal_var: 0.0, ..h.clone() };
        assert!(gp_fit(&[Observation { x: vec![0.0], y: 1.0 }], &bad).is_err());
        assert!(gp_fit(&[Observation { x: vec![0.0], y: f64::NAN }], &h).is_err());
    }
}
