//! Forward pass.
//!
//! Patch tokens are processed in a canonical order (rows sorted
//! lexicographically after positional embeddings are added). Self-attention
//! is permutation-equivariant, so this leaves the class-token output
//! mathematically unchanged while making its floating-point value a
//! function of the token multiset alone.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerParams, ViTParams};
use crate::error::{Error, Result};
use crate::patchseq::{map_to_patches, PatchSequence};
use crate::stmap::MemstMap;

pub const LN_EPS: f64 = 1e-6;

/// Class-token output after the final LayerNorm (and after dropout when
/// produced in training mode).
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub Array1<f64>);

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Row-wise LayerNorm.
pub(crate) fn layer_norm(x: ArrayView2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let (n, d) = x.dim();
    let mut xhat = Array2::<f64>::zeros((n, d));
    let mut inv_std = Array1::<f64>::zeros(n);
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        xhat.row_mut(i).iter_mut().zip(row).for_each(|(o, v)| *o = (v - mean) * is);
    }
    let out = &xhat * gamma + beta;
    (out, NormCache { xhat, inv_std })
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Softmax of each row in place, with max subtraction.
pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionTrace {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Softmax weights per head, `(tokens, tokens)`.
    pub probs: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    pub heads_out: Array2<f64>,
}

/// Multi-head self-attention on already-normalized input; returns the
/// output projection and the intermediate values.
pub(crate) fn attention(a: ArrayView2<f64>, layer: &LayerParams, heads: usize) -> (Array2<f64>, AttentionTrace) {
    let (n, d) = a.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = a.dot(&layer.w_q) + &layer.b_q;
    let k = a.dot(&layer.w_k) + &layer.b_k;
    let v = a.dot(&layer.w_v) + &layer.b_v;
    let mut heads_out = Array2::<f64>::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores.mapv_inplace(|x| x * scale);
        softmax_rows(&mut scores);
        heads_out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let out = heads_out.dot(&layer.w_o) + &layer.b_o;
    (
        out,
        AttentionTrace {
            q,
            k,
            v,
            probs,
            heads_out,
        },
    )
}

#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    pub ln1: NormCache,
    pub a: Array2<f64>,
    pub attn: AttentionTrace,
    pub ln2: NormCache,
    pub b: Array2<f64>,
    pub h1: Array2<f64>,
    pub g: Array2<f64>,
}

pub(crate) fn layer_forward(z: &Array2<f64>, layer: &LayerParams, heads: usize) -> (Array2<f64>, LayerTrace) {
    let (a, ln1) = layer_norm(z.view(), &layer.ln1_gamma, &layer.ln1_beta);
    let (y, attn) = attention(a.view(), layer, heads);
    let z1 = z + &y;
    let (b, ln2) = layer_norm(z1.view(), &layer.ln2_gamma, &layer.ln2_beta);
    let h1 = b.dot(&layer.w_mlp1) + &layer.b_mlp1;
    let g = h1.mapv(gelu);
    let z2 = &z1 + &(g.dot(&layer.w_mlp2) + &layer.b_mlp2);
    (
        z2,
        LayerTrace {
            ln1,
            a,
            attn,
            ln2,
            b,
            h1,
            g,
        },
    )
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Flattened patches in frame order, `(P, patch_dim)`.
    pub(crate) patches: Array2<f64>,
    /// `order[i]` is the frame-order token index placed at position `i`.
    pub(crate) order: Vec<usize>,
    pub(crate) layers: Vec<LayerTrace>,
    pub(crate) final_xhat: Array1<f64>,
    pub(crate) final_inv_std: f64,
    /// Scaled keep-mask (`0` or `1 / (1 - p)`), present in training mode.
    pub(crate) dropout_mask: Option<Array1<f64>>,
    pub descriptor: Descriptor,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

/// Token matrix `(P + 1, D)`: class token, then one projected patch per
/// frame, each plus its positional embedding.
pub fn embed(seq: &PatchSequence, params: &ViTParams) -> Result<Array2<f64>> {
    embed_patches(&seq.patches, params)
}

fn embed_patches(patches: &Array2<f64>, params: &ViTParams) -> Result<Array2<f64>> {
    let cfg = &params.config;
    if patches.dim() != (cfg.num_patches, cfg.patch_dim) {
        return Err(Error::Shape(format!(
            "expected {}x{} patches, got {:?}",
            cfg.num_patches,
            cfg.patch_dim,
            patches.dim()
        )));
    }
    if params.patch_proj.dim() != (cfg.patch_dim, cfg.hidden_dim) || params.positional.nrows() != cfg.tokens() {
        return Err(Error::Shape("parameter shapes do not match config".into()));
    }
    let mut tokens = Array2::<f64>::zeros((cfg.tokens(), cfg.hidden_dim));
    tokens.row_mut(0).assign(&params.class_token);
    tokens
        .slice_mut(s![1.., ..])
        .assign(&(patches.dot(&params.patch_proj) + &params.patch_bias));
    tokens += &params.positional;
    Ok(tokens)
}

/// Class token first, patch tokens sorted lexicographically by value.
fn canonical_order(tokens: &Array2<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (1..tokens.nrows()).collect();
    order.sort_by(|&a, &b| {
        tokens
            .row(a)
            .iter()
            .zip(tokens.row(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order.insert(0, 0);
    order
}

pub(crate) fn dropout_mask(dim: usize, rate: f64, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    Array1::from_shape_fn(dim, |_| if rng.random::<f64>() >= rate { keep } else { 0.0 })
}

struct Encoded {
    order: Vec<usize>,
    layers: Vec<LayerTrace>,
    final_xhat: Array1<f64>,
    final_inv_std: f64,
    descriptor: Array1<f64>,
}

fn encode(tokens: &Array2<f64>, params: &ViTParams) -> Result<Encoded> {
    let cfg = &params.config;
    if tokens.ncols() != cfg.hidden_dim || tokens.nrows() < 1 {
        return Err(Error::Shape(format!(
            "tokens must be Nx{}, got {:?}",
            cfg.hidden_dim,
            tokens.dim()
        )));
    }
    if tokens.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedded tokens".into()));
    }
    let order = canonical_order(tokens);
    let mut z = tokens.select(Axis(0), &order);
    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let (next, trace) = layer_forward(&z, layer, cfg.num_heads);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("encoder layer {l}")));
        }
        z = next;
        layers.push(trace);
    }
    let cls = z.slice(s![0..1, ..]);
    let (out, cache) = layer_norm(cls, &params.final_gamma, &params.final_beta);
    Ok(Encoded {
        order,
        layers,
        final_xhat: cache.xhat.row(0).to_owned(),
        final_inv_std: cache.inv_std[0],
        descriptor: out.row(0).to_owned(),
    })
}

/// Runs the encoder and returns the class-token descriptor. In training
/// mode dropout (rate from the config, mask from `seed`) is applied to it.
pub fn encoder_forward(tokens: &Array2<f64>, params: &ViTParams, train_mode: bool, seed: u64) -> Result<Descriptor> {
    let enc = encode(tokens, params)?;
    let rate = params.config.dropout_rate;
    let mut desc = enc.descriptor;
    if train_mode && rate > 0.0 {
        desc *= &dropout_mask(desc.len(), rate, seed);
    }
    Ok(Descriptor(desc))
}

fn head_logits(desc: ArrayView1<f64>, params: &ViTParams) -> [f64; 2] {
    let l = desc.dot(&params.head_w) + &params.head_b;
    [l[0], l[1]]
}

/// Affine head followed by softmax.
pub fn classify_head(desc: &Descriptor, params: &ViTParams) -> [f64; 2] {
    let p = softmax(&head_logits(desc.0.view(), params));
    [p[0], p[1]]
}

/// Full forward pass on flattened patches, keeping intermediates.
///
/// `dropout_seed` enables training-mode dropout on the descriptor.
pub fn forward_patches(patches: &Array2<f64>, params: &ViTParams, dropout_seed: Option<u64>) -> Result<ForwardTrace> {
    let tokens = embed_patches(patches, params)?;
    let enc = encode(&tokens, params)?;
    let rate = params.config.dropout_rate;
    let dropout_mask = dropout_seed
        .filter(|_| rate > 0.0)
        .map(|seed| dropout_mask(enc.descriptor.len(), rate, seed));
    let dropped = match &dropout_mask {
        Some(mask) => &enc.descriptor * mask,
        None => enc.descriptor.clone(),
    };
    let logits = head_logits(dropped.view(), params);
    let p = softmax(&logits);
    Ok(ForwardTrace {
        patches: patches.clone(),
        order: enc.order,
        layers: enc.layers,
        final_xhat: enc.final_xhat,
        final_inv_std: enc.final_inv_std,
        dropout_mask,
        descriptor: Descriptor(enc.descriptor),
        logits,
        probs: [p[0], p[1]],
    })
}

/// Class probabilities `(real, fake)` for one map.
pub fn forward(map: &MemstMap, params: &ViTParams, train_mode: bool, seed: u64) -> Result<[f64; 2]> {
    let seq = map_to_patches(map);
    let trace = forward_patches(&seq.patches, params, train_mode.then_some(seed))?;
    Ok(trace.probs)
}
