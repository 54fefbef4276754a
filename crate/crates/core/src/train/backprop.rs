//! Reverse-mode gradients of the cross-entropy loss.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::vit::model::{gelu_grad, ForwardTrace, NormCache};
use crate::vit::{LayerParams, ViTConfig, ViTParams};

/// One gradient tensor per parameter tensor, same names and shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub ViTParams);

impl Gradients {
    pub fn zeros(config: ViTConfig) -> Self {
        Gradients(ViTParams::zeros(config).expect("config already validated").zeroed())
    }

    pub fn params(&self) -> &ViTParams {
        &self.0
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((_, mut a), (_, b)) in self.0.named_tensors_mut().into_iter().zip(other.0.named_tensors()) {
            a += &b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.0.named_tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    /// Euclidean norm over all tensors.
    pub fn norm(&self) -> f64 {
        self.0
            .named_tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|v| v * v).collect::<Vec<_>>())
            .sum::<f64>()
            .sqrt()
    }
}

impl ViTParams {
    /// Same shapes with every entry zero (LayerNorm scales included).
    pub(crate) fn zeroed(mut self) -> Self {
        for (_, mut t) in self.named_tensors_mut() {
            t.fill(0.0);
        }
        self
    }
}

fn column_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(0))
}

/// LayerNorm backward: returns the input gradient and accumulates the
/// scale and offset gradients.
fn layer_norm_backward(
    dout: &Array2<f64>,
    cache: &NormCache,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    *dgamma += &(dout * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &column_sums(dout);
    let dxhat = dout * gamma;
    let d = dout.ncols() as f64;
    let mut dx = Array2::<f64>::zeros(dout.dim());
    for (i, mut row) in dx.outer_iter_mut().enumerate() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let is = cache.inv_std[i];
        for ((o, gv), xv) in row.iter_mut().zip(g.iter()).zip(xh.iter()) {
            *o = is * (gv - mean_g - xv * mean_gx);
        }
    }
    dx
}

fn linear_backward(input: ArrayView2<f64>, dout: &Array2<f64>, w: &Array2<f64>, dw: &mut Array2<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    *dw += &input.t().dot(dout);
    *db += &column_sums(dout);
    dout.dot(&w.t())
}

/// Backpropagates `dz` (gradient w.r.t. the layer output) through one
/// encoder block, returning the gradient w.r.t. its input.
fn layer_backward(
    dz2: Array2<f64>,
    trace: &crate::vit::model::LayerTrace,
    layer: &LayerParams,
    grad: &mut LayerParams,
    heads: usize,
) -> Array2<f64> {
    // MLP branch.
    let dg = linear_backward(trace.g.view(), &dz2, &layer.w_mlp2, &mut grad.w_mlp2, &mut grad.b_mlp2);
    let dh1 = &dg * &trace.h1.mapv(gelu_grad);
    let db = linear_backward(trace.b.view(), &dh1, &layer.w_mlp1, &mut grad.w_mlp1, &mut grad.b_mlp1);
    let dz1 = dz2 + layer_norm_backward(&db, &trace.ln2, &layer.ln2_gamma, &mut grad.ln2_gamma, &mut grad.ln2_beta);

    // Attention branch.
    let at = &trace.attn;
    let dheads = linear_backward(at.heads_out.view(), &dz1, &layer.w_o, &mut grad.w_o, &mut grad.b_o);
    let (n, d) = dz1.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::<f64>::zeros((n, d));
    let mut dk = Array2::<f64>::zeros((n, d));
    let mut dv = Array2::<f64>::zeros((n, d));
    for (h, probs) in at.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout = dheads.slice(cols);
        dv.slice_mut(cols).assign(&probs.t().dot(&dout));
        let dp = dout.dot(&at.v.slice(cols).t());
        let mut ds = &dp * probs;
        let row_dot = ds.sum_axis(Axis(1));
        ds -= &(probs * &row_dot.insert_axis(Axis(1)));
        ds.mapv_inplace(|x| x * scale);
        dq.slice_mut(cols).assign(&ds.dot(&at.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&at.q.slice(cols)));
    }
    let a = trace.a.view();
    let mut da = linear_backward(a, &dq, &layer.w_q, &mut grad.w_q, &mut grad.b_q);
    da += &linear_backward(a, &dk, &layer.w_k, &mut grad.w_k, &mut grad.b_k);
    da += &linear_backward(a, &dv, &layer.w_v, &mut grad.w_v, &mut grad.b_v);
    dz1 + layer_norm_backward(&da, &trace.ln1, &layer.ln1_gamma, &mut grad.ln1_gamma, &mut grad.ln1_beta)
}

/// Gradients of `weight * cross_entropy(logits, label)` for one traced
/// forward pass.
pub(crate) fn backward_trace(trace: &ForwardTrace, label: usize, params: &ViTParams, weight: f64) -> Gradients {
    let cfg = params.config;
    let mut grad = Gradients::zeros(cfg);
    let g = &mut grad.0;

    let mut dlogits = Array1::from(trace.probs.to_vec());
    dlogits[label] -= 1.0;
    dlogits *= weight;

    let desc = &trace.descriptor.0;
    let dropped = match &trace.dropout_mask {
        Some(mask) => desc * mask,
        None => desc.clone(),
    };
    g.head_w += &dropped
        .view()
        .insert_axis(Axis(1))
        .dot(&dlogits.view().insert_axis(Axis(0)));
    g.head_b += &dlogits;
    let mut ddesc = params.head_w.dot(&dlogits);
    if let Some(mask) = &trace.dropout_mask {
        ddesc *= mask;
    }

    let cache = NormCache {
        xhat: trace.final_xhat.clone().insert_axis(Axis(0)),
        inv_std: Array1::from_elem(1, trace.final_inv_std),
    };
    let dcls = layer_norm_backward(
        &ddesc.insert_axis(Axis(0)),
        &cache,
        &params.final_gamma,
        &mut g.final_gamma,
        &mut g.final_beta,
    );
    let mut dz = Array2::<f64>::zeros((cfg.tokens(), cfg.hidden_dim));
    dz.row_mut(0).assign(&dcls.row(0));

    for ((layer, lt), lg) in params.layers.iter().zip(&trace.layers).zip(g.layers.iter_mut()).rev() {
        dz = layer_backward(dz, lt, layer, lg, cfg.num_heads);
    }

    // Undo the canonical token order.
    let mut dtokens = Array2::<f64>::zeros(dz.dim());
    for (pos, &src) in trace.order.iter().enumerate() {
        dtokens.row_mut(src).assign(&dz.row(pos));
    }
    g.positional += &dtokens;
    g.class_token += &dtokens.row(0);
    let dpatch_tokens = dtokens.slice(s![1.., ..]);
    g.patch_proj += &trace.patches.t().dot(&dpatch_tokens);
    g.patch_bias += &dpatch_tokens.sum_axis(Axis(0));
    grad
}
