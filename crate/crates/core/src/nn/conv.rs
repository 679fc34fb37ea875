//! Same-length causal 1-D convolution.
//!
//! `out[t, o] = b[o] + sum_{i<k} sum_c W[o, c, i] * X[t - i, c]` with `X[t - i] = 0`
//! for `t < i` (left zero padding of `k - 1`).

use ndarray::{Array1, Array2, Array3};

use super::NnError;

/// One convolution block. `kernel` is `(f_out, f_in, k)`, tap `i` multiplies `x[t - i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Array3<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    pub fn zeros(f_out: usize, f_in: usize, k: usize) -> Self {
        Self {
            kernel: Array3::zeros((f_out, f_in, k)),
            bias: Array1::zeros(f_out),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim().1
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.dim().2
    }
}

pub fn causal_conv1d(
    x: &Array2<f64>,
    kernel: &Array3<f64>,
    bias: &Array1<f64>,
) -> Result<Array2<f64>, NnError> {
    let (w, c_in) = x.dim();
    let (f_out, f_in, k) = kernel.dim();
    if f_in != c_in || bias.len() != f_out {
        return Err(NnError::ShapeMismatch(format!(
            "conv input has {c_in} channels, kernel expects {f_in}; bias {} vs {f_out} filters",
            bias.len()
        )));
    }
    if k == 0 || k > w {
        return Err(NnError::ShapeMismatch(format!(
            "kernel size {k} must lie in 1..={w}"
        )));
    }
    let mut out = Array2::zeros((w, f_out));
    for t in 0..w {
        for o in 0..f_out {
            let mut acc = bias[o];
            for i in 0..k.min(t + 1) {
                let row = t - i;
                for c in 0..c_in {
                    acc += kernel[[o, c, i]] * x[[row, c]];
                }
            }
            out[[t, o]] = acc;
        }
    }
    Ok(out)
}

pub fn relu(h: &Array2<f64>) -> Array2<f64> {
    h.mapv(|v| v.max(0.0))
}

/// Transpose of [`causal_conv1d`]: given the upstream gradient of the
/// pre-activation, returns `(d_kernel, d_bias, d_input)`.
pub(crate) fn causal_conv1d_backward(
    x: &Array2<f64>,
    kernel: &Array3<f64>,
    d_out: &Array2<f64>,
) -> (Array3<f64>, Array1<f64>, Array2<f64>) {
    let (w, c_in) = x.dim();
    let (f_out, _, k) = kernel.dim();
    let mut d_kernel = Array3::zeros(kernel.dim());
    let mut d_bias = Array1::zeros(f_out);
    let mut d_x = Array2::zeros((w, c_in));
    for t in 0..w {
        for o in 0..f_out {
            let g = d_out[[t, o]];
            if g == 0.0 {
                continue;
            }
            d_bias[o] += g;
            for i in 0..k.min(t + 1) {
                let row = t - i;
                for c in 0..c_in {
                    d_kernel[[o, c, i]] += g * x[[row, c]];
                    d_x[[row, c]] += g * kernel[[o, c, i]];
                }
            }
        }
    }
    (d_kernel, d_bias, d_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn single_tap_identity() {
        let x = column(&[0.5, -1.0, 2.0]);
        let k = Array3::from_elem((1, 1, 1), 1.0);
        let out = causal_conv1d(&x, &k, &Array1::zeros(1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn two_tap_hand_sum() {
        let x = column(&[1.0, 2.0, 3.0]);
        let k = Array3::from_elem((1, 1, 2), 1.0);
        let out = causal_conv1d(&x, &k, &Array1::zeros(1)).unwrap();
        assert_eq!(out, array![[1.0], [3.0], [5.0]]);
    }

    #[test]
    fn matches_direct_double_loop() {
        // reference written against a zero-padded copy of the input
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, c_in, f, k) = (16, 3, 5, 4);
        let x = Array2::from_shape_fn((w, c_in), |_| rng.random_range(-1.0..1.0));
        let kern = Array3::from_shape_fn((f, c_in, k), |_| rng.random_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(f, |_| rng.random_range(-1.0..1.0));
        let mut padded = Array2::<f64>::zeros((w + k - 1, c_in));
        padded.slice_mut(ndarray::s![k - 1.., ..]).assign(&x);
        let out = causal_conv1d(&x, &kern, &bias).unwrap();
        for t in 0..w {
            for o in 0..f {
                let mut expect = bias[o];
                for j in 0..k {
                    // padded row t + j corresponds to x[t + j - (k - 1)], i.e. tap k - 1 - j
                    for c in 0..c_in {
                        expect += kern[[o, c, k - 1 - j]] * padded[[t + j, c]];
                    }
                }
                assert!((out[[t, o]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = column(&[1.0, 2.0]);
        let k = Array3::from_elem((1, 1, 3), 1.0);
        assert!(causal_conv1d(&x, &k, &Array1::zeros(1)).is_err());
        let k = Array3::from_elem((1, 2, 1), 1.0);
        assert!(causal_conv1d(&x, &k, &Array1::zeros(1)).is_err());
    }

    #[test]
    fn relu_cases() {
        let h = array![[-1.0, 0.0, 2.0]];
        assert_eq!(relu(&h), array![[0.0, 0.0, 2.0]]);
        let neg = array![[-3.0, -0.5]];
        assert!(relu(&neg).iter().all(|&v| v == 0.0));
        let mixed = array![[-1.5, 4.0], [2.0, -0.1]];
        assert_eq!(relu(&relu(&mixed)), relu(&mixed));
    }
}
