//! Multi-head scaled dot-product self-attention over the time axis.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use super::NnError;

/// Per-head projections `w_q`, `w_k`, `w_v` are stacked as `(heads, d, d_k)`;
/// `w_o` maps the concatenated heads `(heads * d_k)` to the output width.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w_q: Array3<f64>,
    pub w_k: Array3<f64>,
    pub w_v: Array3<f64>,
    pub w_o: Array2<f64>,
}

impl AttentionWeights {
    pub fn zeros(heads: usize, d: usize, d_k: usize, d_out: usize) -> Self {
        Self {
            w_q: Array3::zeros((heads, d, d_k)),
            w_k: Array3::zeros((heads, d, d_k)),
            w_v: Array3::zeros((heads, d, d_k)),
            w_o: Array2::zeros((heads * d_k, d_out)),
        }
    }

    pub fn heads(&self) -> usize {
        self.w_q.dim().0
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.dim().1
    }

    pub fn head_dim(&self) -> usize {
        self.w_q.dim().2
    }

    pub fn output_dim(&self) -> usize {
        self.w_o.dim().1
    }
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache {
    pub q: Vec<Array2<f64>>,
    pub k: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// `(heads, w, w)`, each row a probability vector over key positions.
    pub weights: Array3<f64>,
    pub concat: Array2<f64>,
    pub output: Array2<f64>,
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub(crate) fn attention_forward(
    h: &Array2<f64>,
    p: &AttentionWeights,
) -> Result<AttentionCache, NnError> {
    let (w, d) = h.dim();
    if d != p.input_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "attention input width {d}, projections expect {}",
            p.input_dim()
        )));
    }
    let (heads, d_k) = (p.heads(), p.head_dim());
    if p.w_o.dim().0 != heads * d_k {
        return Err(NnError::ShapeMismatch(format!(
            "output projection has {} rows, expected {}",
            p.w_o.dim().0,
            heads * d_k
        )));
    }
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut weights = Array3::zeros((heads, w, w));
    let mut concat = Array2::zeros((w, heads * d_k));
    let (mut qs, mut ks, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..heads {
        let q = h.dot(&p.w_q.index_axis(Axis(0), j));
        let k = h.dot(&p.w_k.index_axis(Axis(0), j));
        let v = h.dot(&p.w_v.index_axis(Axis(0), j));
        let a = softmax_rows(&(q.dot(&k.t()) * scale));
        concat
            .slice_mut(s![.., j * d_k..(j + 1) * d_k])
            .assign(&a.dot(&v));
        weights.index_axis_mut(Axis(0), j).assign(&a);
        qs.push(q);
        ks.push(k);
        vs.push(v);
    }
    let output = concat.dot(&p.w_o);
    Ok(AttentionCache {
        q: qs,
        k: ks,
        v: vs,
        weights,
        concat,
        output,
    })
}

/// `MHA(H) = Concat(head_1..head_h) W^O`, `head_j = softmax(Q_j K_j^T / sqrt(d_k)) V_j`.
/// Returns the attended features `(w, d')` and the attention tensor `(heads, w, w)`.
pub fn mha(h: &Array2<f64>, p: &AttentionWeights) -> Result<(Array2<f64>, Array3<f64>), NnError> {
    let cache = attention_forward(h, p)?;
    Ok((cache.output, cache.weights))
}

pub(crate) fn attention_backward(
    h: &Array2<f64>,
    p: &AttentionWeights,
    cache: &AttentionCache,
    d_out: &Array2<f64>,
) -> (AttentionWeights, Array2<f64>) {
    let (heads, d_k) = (p.heads(), p.head_dim());
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut grads = AttentionWeights::zeros(heads, p.input_dim(), d_k, p.output_dim());
    grads.w_o = cache.concat.t().dot(d_out);
    let d_concat = d_out.dot(&p.w_o.t());
    let mut d_h = Array2::zeros(h.dim());
    for j in 0..heads {
        let d_head = d_concat.slice(s![.., j * d_k..(j + 1) * d_k]);
        let a = cache.weights.index_axis(Axis(0), j);
        let d_a = d_head.dot(&cache.v[j].t());
        let d_v = a.t().dot(&d_head);
        let d_logits = softmax_backward(a, &d_a) * scale;
        let d_q = d_logits.dot(&cache.k[j]);
        let d_k_mat = d_logits.t().dot(&cache.q[j]);

        grads.w_q.index_axis_mut(Axis(0), j).assign(&h.t().dot(&d_q));
        grads.w_k.index_axis_mut(Axis(0), j).assign(&h.t().dot(&d_k_mat));
        grads.w_v.index_axis_mut(Axis(0), j).assign(&h.t().dot(&d_v));

        d_h = d_h
            + d_q.dot(&p.w_q.index_axis(Axis(0), j).t())
            + d_k_mat.dot(&p.w_k.index_axis(Axis(0), j).t())
            + d_v.dot(&p.w_v.index_axis(Axis(0), j).t());
    }
    (grads, d_h)
}

/// Row-wise softmax Jacobian-vector product: `A * (dA - rowsum(dA * A))`.
fn softmax_backward(a: ArrayView2<f64>, d_a: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(a.dim());
    for (r, (a_row, g_row)) in a.rows().into_iter().zip(d_a.rows()).enumerate() {
        let dot: f64 = a_row.iter().zip(g_row.iter()).map(|(x, y)| x * y).sum();
        for c in 0..a_row.len() {
            out[[r, c]] = a_row[c] * (g_row[c] - dot);
        }
    }
    out
}
