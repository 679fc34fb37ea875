//! The hybrid forecaster: stacked causal convolutions, multi-head self-attention
//! over the convolutional features, time-wise concatenation of both, global
//! average pooling and a scalar dense head.
//!
//! Forward passes record a [`ForwardTrace`]; [`backward`] differentiates the
//! whole network analytically from that trace.

mod attention;
pub mod checkpoint;
mod conv;

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attention::{mha, softmax_rows, AttentionCache, AttentionWeights};
pub use conv::{causal_conv1d, relu, ConvLayer};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("temporal lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input window length `w`.
    pub window: usize,
    pub cnn_layers: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub heads: usize,
    /// Per-head projection width. `None` resolves to `max(1, round(filters / heads))`.
    pub head_dim: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 15,
            cnn_layers: 2,
            filters: 16,
            kernel_size: 3,
            heads: 2,
            head_dim: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Architecture reported as the tuned optimum: 3 conv layers, 4 heads,
    /// 238 filters of width 4.
    pub fn reported_optimum(window: usize) -> Self {
        Self {
            window,
            cnn_layers: 3,
            filters: 238,
            kernel_size: 4,
            heads: 4,
            head_dim: None,
            seed: 0,
        }
    }

    pub fn d_k(&self) -> usize {
        self.head_dim.unwrap_or_else(|| {
            ((self.filters as f64 / self.heads.max(1) as f64).round() as usize).max(1)
        })
    }

    /// Width of the attention output, `heads * d_k`.
    pub fn attention_width(&self) -> usize {
        self.heads * self.d_k()
    }

    /// Width of the pooled vector `d + d'`.
    pub fn fused_width(&self) -> usize {
        self.filters + self.attention_width()
    }

    pub fn receptive_field(&self) -> usize {
        self.cnn_layers * (self.kernel_size - 1) + 1
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let fields = [
            ("window", self.window),
            ("cnn_layers", self.cnn_layers),
            ("filters", self.filters),
            ("kernel_size", self.kernel_size),
            ("heads", self.heads),
            ("head_dim", self.d_k()),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(NnError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.kernel_size > self.window {
            return Err(NnError::InvalidConfig(format!(
                "kernel_size {} exceeds window {}",
                self.kernel_size, self.window
            )));
        }
        Ok(())
    }
}

/// Dense output layer `y = w_out . z + b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

/// Every learnable tensor of the network. Also used for gradients and
/// optimizer moments, which mirror the parameter shapes exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    pub conv: Vec<ConvLayer>,
    pub attention: AttentionWeights,
    pub head: DenseHead,
}

pub type Gradients = ParamTensors;

/// Borrowed view of one named tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorView<'a> {
    pub shape: &'a [usize],
    pub data: &'a [f64],
}

impl ParamTensors {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (f, k, h, d_k) = (config.filters, config.kernel_size, config.heads, config.d_k());
        let conv = (0..config.cnn_layers)
            .map(|l| ConvLayer::zeros(f, if l == 0 { 1 } else { f }, k))
            .collect();
        Self {
            conv,
            attention: AttentionWeights::zeros(h, f, d_k, h * d_k),
            head: DenseHead {
                w_out: Array1::zeros(f + h * d_k),
                b_out: 0.0,
            },
        }
    }

    /// Tensors in a fixed canonical order, paired with stable names.
    pub fn named(&self) -> Vec<(String, TensorView<'_>)> {
        let mut out = Vec::new();
        for (l, layer) in self.conv.iter().enumerate() {
            out.push((format!("conv.{l}.kernel"), view3(&layer.kernel)));
            out.push((format!("conv.{l}.bias"), view1(&layer.bias)));
        }
        out.push(("attention.w_q".into(), view3(&self.attention.w_q)));
        out.push(("attention.w_k".into(), view3(&self.attention.w_k)));
        out.push(("attention.w_v".into(), view3(&self.attention.w_v)));
        out.push(("attention.w_o".into(), view2(&self.attention.w_o)));
        out.push(("head.w_out".into(), view1(&self.head.w_out)));
        out.push((
            "head.b_out".into(),
            TensorView {
                shape: &[],
                data: std::slice::from_ref(&self.head.b_out),
            },
        ));
        out
    }

    /// Mutable flat slices in the same order as [`ParamTensors::named`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.conv {
            out.push(layer.kernel.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        let a = &mut self.attention;
        out.push(a.w_q.as_slice_mut().expect("standard layout"));
        out.push(a.w_k.as_slice_mut().expect("standard layout"));
        out.push(a.w_v.as_slice_mut().expect("standard layout"));
        out.push(a.w_o.as_slice_mut().expect("standard layout"));
        out.push(self.head.w_out.as_slice_mut().expect("standard layout"));
        out.push(std::slice::from_mut(&mut self.head.b_out));
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.named().into_iter().map(|(_, v)| v.data).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &ParamTensors) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.slices_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn same_shapes(&self, other: &ParamTensors) -> bool {
        let a = self.named();
        let b = other.named();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.1.shape == y.1.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

fn view1(a: &Array1<f64>) -> TensorView<'_> {
    TensorView {
        shape: a.shape(),
        data: a.as_slice().expect("standard layout"),
    }
}

fn view2(a: &Array2<f64>) -> TensorView<'_> {
    TensorView {
        shape: a.shape(),
        data: a.as_slice().expect("standard layout"),
    }
}

fn view3(a: &Array3<f64>) -> TensorView<'_> {
    TensorView {
        shape: a.shape(),
        data: a.as_slice().expect("standard layout"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: ParamTensors,
}

/// Seeded initialization. Conv kernels use He-uniform (`sqrt(6 / fan_in)`),
/// attention and dense projections Glorot-uniform, biases start at zero.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams, NnError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tensors = ParamTensors::zeros(config);

    for layer in &mut tensors.conv {
        let (_, f_in, k) = layer.kernel.dim();
        let limit = (6.0 / (f_in * k) as f64).sqrt();
        fill_uniform(layer.kernel.as_slice_mut().unwrap(), limit, &mut rng);
    }
    let (d, d_k) = (config.filters, config.d_k());
    let qkv_limit = glorot(d, d_k);
    let a = &mut tensors.attention;
    for t in [&mut a.w_q, &mut a.w_k, &mut a.w_v] {
        fill_uniform(t.as_slice_mut().unwrap(), qkv_limit, &mut rng);
    }
    let (rows, cols) = a.w_o.dim();
    fill_uniform(a.w_o.as_slice_mut().unwrap(), glorot(rows, cols), &mut rng);
    let fused = tensors.head.w_out.len();
    fill_uniform(
        tensors.head.w_out.as_slice_mut().unwrap(),
        glorot(fused, 1),
        &mut rng,
    );
    Ok(ModelParams {
        config: *config,
        tensors,
    })
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform(data: &mut [f64], limit: f64, rng: &mut ChaCha8Rng) {
    for v in data {
        *v = rng.random_range(-limit..limit);
    }
}

/// `z = mean_t [H_cnn[t] || H_att[t]]`.
pub fn fuse_pool(h_cnn: &Array2<f64>, h_att: &Array2<f64>) -> Result<Array1<f64>, NnError> {
    Ok(fuse(h_cnn, h_att)?.mean_axis(Axis(0)).expect("non-empty"))
}

fn fuse(h_cnn: &Array2<f64>, h_att: &Array2<f64>) -> Result<Array2<f64>, NnError> {
    let (w, d) = h_cnn.dim();
    let (w2, d2) = h_att.dim();
    if w != w2 {
        return Err(NnError::LengthMismatch(w, w2));
    }
    if w == 0 {
        return Err(NnError::ShapeMismatch("empty time axis".into()));
    }
    let mut fused = Array2::zeros((w, d + d2));
    fused.slice_mut(s![.., ..d]).assign(h_cnn);
    fused.slice_mut(s![.., d..]).assign(h_att);
    Ok(fused)
}

/// Everything computed during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// The input window as a `(w, 1)` column.
    pub input: Array2<f64>,
    /// Per conv layer, before ReLU.
    pub pre_activations: Vec<Array2<f64>>,
    /// Per conv layer, after ReLU. The last one is `H_cnn`.
    pub activations: Vec<Array2<f64>>,
    pub attention: AttentionCache,
    pub fused: Array2<f64>,
    pub pooled: Array1<f64>,
    pub prediction: f64,
}

impl ForwardTrace {
    /// Attention weights `(heads, w, w)`.
    pub fn attention_weights(&self) -> &Array3<f64> {
        &self.attention.weights
    }

    pub fn cnn_output(&self) -> &Array2<f64> {
        self.activations.last().expect("at least one conv layer")
    }
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<(f64, ForwardTrace), NnError> {
    let cfg = &params.config;
    if x.len() != cfg.window {
        return Err(NnError::ShapeMismatch(format!(
            "input window has length {}, model expects {}",
            x.len(),
            cfg.window
        )));
    }
    let input = Array2::from_shape_vec((x.len(), 1), x.to_vec()).expect("column shape");
    let t = &params.tensors;
    let mut pre_activations = Vec::with_capacity(t.conv.len());
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(t.conv.len());
    for layer in &t.conv {
        let src = activations.last().unwrap_or(&input);
        let pre = causal_conv1d(src, &layer.kernel, &layer.bias)?;
        activations.push(relu(&pre));
        pre_activations.push(pre);
    }
    let h_cnn = activations.last().ok_or_else(|| {
        NnError::InvalidConfig("model has no convolution layers".into())
    })?;
    let attention = attention::attention_forward(h_cnn, &t.attention)?;
    let fused = fuse(h_cnn, &attention.output)?;
    let pooled = fused.mean_axis(Axis(0)).expect("non-empty");
    if pooled.len() != t.head.w_out.len() {
        return Err(NnError::ShapeMismatch(format!(
            "pooled width {} vs head width {}",
            pooled.len(),
            t.head.w_out.len()
        )));
    }
    let prediction = t.head.w_out.dot(&pooled) + t.head.b_out;
    let trace = ForwardTrace {
        input,
        pre_activations,
        activations,
        attention,
        fused,
        pooled,
        prediction,
    };
    Ok((prediction, trace))
}

/// Model output only.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<f64, NnError> {
    forward(params, x).map(|(y, _)| y)
}

/// Reverse-mode gradient of `L` with respect to every parameter, given
/// `dL/dy_hat` and the trace of the forward pass that produced `y_hat`.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, d_pred: f64) -> Result<Gradients, NnError> {
    check_trace(params, trace)?;
    let t = &params.tensors;
    let cfg = &params.config;
    let w = cfg.window as f64;
    let d = cfg.filters;
    let mut grads = ParamTensors::zeros(cfg);

    grads.head.b_out = d_pred;
    grads.head.w_out = &trace.pooled * d_pred;
    let d_pooled = &t.head.w_out * d_pred;

    // pooling spreads d_pooled / w evenly over time
    let d_cnn_row = d_pooled.slice(s![..d]).mapv(|v| v / w);
    let d_att_row = d_pooled.slice(s![d..]).mapv(|v| v / w);
    let d_att = broadcast_rows(&d_att_row, cfg.window);
    let h_cnn = trace.cnn_output();
    let (att_grads, d_h_from_att) =
        attention::attention_backward(h_cnn, &t.attention, &trace.attention, &d_att);
    grads.attention = att_grads;

    let mut d_act = broadcast_rows(&d_cnn_row, cfg.window) + d_h_from_att;
    for l in (0..t.conv.len()).rev() {
        let pre = &trace.pre_activations[l];
        let d_pre = ndarray::Zip::from(&d_act)
            .and(pre)
            .map_collect(|&g, &p| if p > 0.0 { g } else { 0.0 });
        let src = if l == 0 { &trace.input } else { &trace.activations[l - 1] };
        let (dk, db, dx) = conv::causal_conv1d_backward(src, &t.conv[l].kernel, &d_pre);
        grads.conv[l] = ConvLayer { kernel: dk, bias: db };
        d_act = dx;
    }
    Ok(grads)
}

fn broadcast_rows(row: &Array1<f64>, rows: usize) -> Array2<f64> {
    row.broadcast((rows, row.len()))
        .expect("broadcastable")
        .to_owned()
}

fn check_trace(params: &ModelParams, trace: &ForwardTrace) -> Result<(), NnError> {
    let cfg = &params.config;
    let bad = |m: String| Err(NnError::TraceMismatch(m));
    if trace.input.dim() != (cfg.window, 1) {
        return bad(format!("input shape {:?}", trace.input.dim()));
    }
    if trace.activations.len() != params.tensors.conv.len()
        || trace.pre_activations.len() != params.tensors.conv.len()
    {
        return bad(format!("{} conv layers recorded", trace.activations.len()));
    }
    if trace
        .activations
        .iter()
        .any(|a| a.dim() != (cfg.window, cfg.filters))
    {
        return bad("conv activation shape".into());
    }
    if trace.attention.weights.dim() != (cfg.heads, cfg.window, cfg.window)
        || trace.attention.q.len() != cfg.heads
    {
        return bad(format!("attention shape {:?}", trace.attention.weights.dim()));
    }
    if trace.pooled.len() != cfg.fused_width() {
        return bad(format!("pooled width {}", trace.pooled.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            window: 8,
            cnn_layers: 2,
            filters: 4,
            kernel_size: 2,
            heads: 2,
            head_dim: Some(2),
            seed: 11,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&tiny()).unwrap();
        let b = init_params(&tiny()).unwrap();
        assert_eq!(a, b);
        let c = init_params(&ModelConfig { seed: 12, ..tiny() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes() {
        let cfg = ModelConfig {
            window: 6,
            cnn_layers: 1,
            filters: 4,
            kernel_size: 2,
            heads: 1,
            head_dim: None,
            seed: 0,
        };
        let p = init_params(&cfg).unwrap();
        assert_eq!(p.tensors.conv[0].kernel.dim(), (4, 1, 2));
        assert_eq!(p.tensors.conv[0].bias.len(), 4);
        assert_eq!(p.tensors.attention.w_q.dim(), (1, 4, 4));
        assert_eq!(p.tensors.head.w_out.len(), 8);
        assert!(p.tensors.conv[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn conv_init_moment() {
        let cfg = ModelConfig {
            window: 16,
            cnn_layers: 2,
            filters: 64,
            kernel_size: 3,
            heads: 2,
            head_dim: None,
            seed: 5,
        };
        let p = init_params(&cfg).unwrap();
        let k = &p.tensors.conv[1].kernel;
        assert!(k.len() >= 10_000);
        let n = k.len() as f64;
        let mean = k.sum() / n;
        let std = (k.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = (2.0f64 / (64.0 * 3.0)).sqrt();
        assert!((std / target - 1.0).abs() < 0.2, "std {std} target {target}");
    }

    #[test]
    fn default_head_dim_rounds() {
        let cfg = ModelConfig::reported_optimum(15);
        assert_eq!(cfg.d_k(), 60);
        assert_eq!(cfg.attention_width(), 240);
        assert_eq!(ModelConfig { filters: 3, heads: 5, ..cfg }.d_k(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { kernel_size: 9, ..tiny() }.validate().is_err());
        assert!(ModelConfig { heads: 0, ..tiny() }.validate().is_err());
        assert!(tiny().validate().is_ok());
    }

    #[test]
    fn fuse_pool_cases() {
        let a = ndarray::array![[1.0], [3.0]];
        let b = ndarray::array![[2.0], [4.0]];
        assert_eq!(fuse_pool(&a, &b).unwrap(), ndarray::array![2.0, 3.0]);
        let c = ndarray::array![[5.0, -1.0], [5.0, -1.0], [5.0, -1.0]];
        let d = ndarray::array![[0.5], [0.5], [0.5]];
        assert_eq!(fuse_pool(&c, &d).unwrap(), ndarray::array![5.0, -1.0, 0.5]);
        assert!(matches!(
            fuse_pool(&a, &c),
            Err(NnError::LengthMismatch(2, 3))
        ));
    }

    #[test]
    fn fuse_pool_time_permutation() {
        let a = ndarray::array![[1.0, 2.0], [3.0, 5.0], [-1.0, 0.5]];
        let b = ndarray::array![[0.1], [0.2], [0.7]];
        let pa = ndarray::array![[-1.0, 0.5], [1.0, 2.0], [3.0, 5.0]];
        let pb = ndarray::array![[0.7], [0.1], [0.2]];
        let z1 = fuse_pool(&a, &b).unwrap();
        let z2 = fuse_pool(&pa, &pb).unwrap();
        for (x, y) in z1.iter().zip(z2.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_network() {
        let mut p = init_params(&tiny()).unwrap();
        for s in p.tensors.slices_mut() {
            s.fill(0.0);
        }
        p.tensors.head.b_out = 2.5;
        for x in [[0.0; 8], [1.0; 8], [-3.0, 1.0, 2.0, 0.0, 5.0, 1.0, 1.0, 9.0]] {
            assert_eq!(predict(&p, &x).unwrap(), 2.5);
        }
    }

    #[test]
    fn prediction_consistent_with_trace() {
        let p = init_params(&tiny()).unwrap();
        let x = [0.3, -0.2, 1.1, 0.0, 0.7, -1.4, 0.2, 0.9];
        let (y, trace) = forward(&p, &x).unwrap();
        let again = p.tensors.head.w_out.dot(&trace.pooled) + p.tensors.head.b_out;
        assert!((y - again).abs() < 1e-12);
        assert_eq!(forward(&p, &x).unwrap().0, y);
        assert!(forward(&p, &x[..7]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = init_params(&tiny()).unwrap();
        let (_, trace) = forward(&p, &[0.5; 8]).unwrap();
        let g = backward(&p, &trace, 0.0).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        let g = backward(&p, &trace, -1.75).unwrap();
        assert_eq!(g.head.b_out, -1.75);
    }

    #[test]
    fn foreign_trace_rejected() {
        let p = init_params(&tiny()).unwrap();
        let other = init_params(&ModelConfig { filters: 6, head_dim: Some(3), ..tiny() }).unwrap();
        let (_, trace) = forward(&other, &[0.1; 8]).unwrap();
        assert!(matches!(backward(&p, &trace, 1.0), Err(NnError::TraceMismatch(_))));
    }

    fn finite_difference_gradients(params: &ModelParams, x: &[f64], eps: f64) -> Vec<Vec<f64>> {
        let mut probe = params.clone();
        let lens: Vec<usize> = probe.tensors.slices().iter().map(|s| s.len()).collect();
        let mut out = Vec::new();
        for (t, &n) in lens.iter().enumerate() {
            let mut g = vec![0.0; n];
            for (i, gi) in g.iter_mut().enumerate() {
                let orig = probe.tensors.slices_mut()[t][i];
                probe.tensors.slices_mut()[t][i] = orig + eps;
                let up = predict(&probe, x).unwrap();
                probe.tensors.slices_mut()[t][i] = orig - eps;
                let down = predict(&probe, x).unwrap();
                probe.tensors.slices_mut()[t][i] = orig;
                *gi = (up - down) / (2.0 * eps);
            }
            out.push(g);
        }
        out
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..3 {
            let mut p = init_params(&ModelConfig { seed, ..tiny() }).unwrap();
            // zero-initialized biases would put pre-activations exactly on the ReLU kink
            for t in p.tensors.slices_mut() {
                for v in t.iter_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (_, trace) = forward(&p, &x).unwrap();
            let margin = trace.pre_activations.iter().flatten().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            assert!(margin > 1e-3, "seed {seed} sits within {margin} of a ReLU kink");
            let analytic = backward(&p, &trace, 1.0).unwrap();
            let numeric = finite_difference_gradients(&p, &x, 1e-4);
            for ((name, view), num) in analytic.named().iter().zip(&numeric) {
                for (a, n) in view.data.iter().zip(num) {
                    let diff = (a - n).abs();
                    assert!(
                        diff <= 1e-7 || diff / a.abs().max(n.abs()) < 1e-4,
                        "{name}: analytic {a} numeric {n}"
                    );
                }
            }
        }
    }
}
