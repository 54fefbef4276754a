//! Import of externally exported ViT weights (timm naming).
//!
//! | external name                         | local tensor                     |
//! |---------------------------------------|----------------------------------|
//! | `patch_embed.proj.weight` `[D,3,16,16]` | `patch_projection` `[768,D]`, row `(r*16+c)*3+ch` |
//! | `patch_embed.proj.bias`               | `patch_bias`                     |
//! | `cls_token` `[1,1,D]`                 | `class_token`                    |
//! | `pos_embed` `[1,P+1,D]`               | `positional`                     |
//! | `blocks.i.norm1.{weight,bias}`        | `layers.i.ln1.{gamma,beta}`      |
//! | `blocks.i.attn.qkv.weight` `[3D,D]`   | `layers.i.attn.w_{q,k,v}` (transposed thirds) |
//! | `blocks.i.attn.qkv.bias`              | `layers.i.attn.b_{q,k,v}`        |
//! | `blocks.i.attn.proj.{weight,bias}`    | `layers.i.attn.{w_o,b_o}`        |
//! | `blocks.i.norm2.{weight,bias}`        | `layers.i.ln2.{gamma,beta}`      |
//! | `blocks.i.mlp.fc1.{weight,bias}`      | `layers.i.mlp.{w1,b1}`           |
//! | `blocks.i.mlp.fc2.{weight,bias}`      | `layers.i.mlp.{w2,b2}`           |
//! | `norm.{weight,bias}`                  | `final_ln.{gamma,beta}`          |
//! | `head.{weight,bias}` (2 classes only) | `head.{weight,bias}`             |
//!
//! Linear weights are stored `(out, in)` externally and transposed here.
//! Any shape disagreement with the requested config is an error; nothing
//! is silently truncated or padded.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{ViTConfig, ViTParams};
use crate::error::{Error, Result};
use crate::patchseq::PATCH_SIDE;

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        RawTensor { shape, data }
    }
}

/// Reads all `F32` tensors of a safetensors file.
pub fn read_safetensors(path: &Path) -> Result<BTreeMap<String, RawTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::open(path, e))?;
    let st = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| Error::format("safetensors", e.to_string()))?;
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != safetensors::Dtype::F32 {
            return Err(Error::format("safetensors", format!("{name}: only F32 tensors are supported")));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        out.insert(name, RawTensor::new(view.shape().to_vec(), data));
    }
    Ok(out)
}

/// Writes tensors as `F32` safetensors, the inverse of [`read_safetensors`].
pub fn write_safetensors(tensors: &BTreeMap<String, RawTensor>, path: &Path) -> Result<()> {
    let bytes: Vec<(&String, Vec<u8>)> = tensors
        .iter()
        .map(|(name, t)| (name, t.data.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()))
        .collect();
    let views = bytes
        .iter()
        .map(|(name, data)| {
            safetensors::tensor::TensorView::new(safetensors::Dtype::F32, tensors[*name].shape.clone(), data)
                .map(|v| (name.as_str(), v))
                .map_err(|e| Error::format("safetensors", e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize_to_file(views, &None, path).map_err(|e| Error::format("safetensors", e.to_string()))
}

struct Source<'a> {
    tensors: &'a BTreeMap<String, RawTensor>,
}

impl Source<'_> {
    fn get(&self, name: &str, shape: &[usize]) -> Result<&RawTensor> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::ConfigMismatch(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(Error::ConfigMismatch(format!(
                "{name} has shape {:?}, config requires {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    fn vector(&self, name: &str, n: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.get(name, &[n])?.data.clone()))
    }

    /// External `(out, in)` linear weight as a local `(in, out)` matrix.
    fn linear(&self, name: &str, out_dim: usize, in_dim: usize) -> Result<Array2<f64>> {
        let t = self.get(name, &[out_dim, in_dim])?;
        let m = Array2::from_shape_vec((out_dim, in_dim), t.data.clone()).expect("shape checked");
        Ok(m.reversed_axes().as_standard_layout().into_owned())
    }
}

/// Maps timm-named tensors onto local parameters for `config`. Tensors
/// that have no external counterpart keep the training initialization.
pub fn import_timm(tensors: &BTreeMap<String, RawTensor>, config: ViTConfig, seed: u64) -> Result<ViTParams> {
    let mut p = ViTParams::init(config, seed)?;
    let src = Source { tensors };
    let (d, f) = (config.hidden_dim, config.mlp_dim);

    if let Some(cls) = tensors.get("cls_token") {
        if cls.shape.last() != Some(&d) {
            return Err(Error::ConfigMismatch(format!(
                "external hidden size {:?} differs from configured {d}",
                cls.shape.last()
            )));
        }
    }
    let blocks = tensors
        .keys()
        .filter_map(|k| k.strip_prefix("blocks.")?.split('.').next()?.parse::<usize>().ok())
        .max()
        .map_or(0, |m| m + 1);
    if blocks != config.num_layers {
        return Err(Error::ConfigMismatch(format!(
            "external model has {blocks} blocks, config expects {}",
            config.num_layers
        )));
    }

    let conv = src.get("patch_embed.proj.weight", &[d, 3, PATCH_SIDE, PATCH_SIDE])?;
    for out in 0..d {
        for ch in 0..3 {
            for r in 0..PATCH_SIDE {
                for c in 0..PATCH_SIDE {
                    let v = conv.data[((out * 3 + ch) * PATCH_SIDE + r) * PATCH_SIDE + c];
                    p.patch_proj[((r * PATCH_SIDE + c) * 3 + ch, out)] = v;
                }
            }
        }
    }
    p.patch_bias = src.vector("patch_embed.proj.bias", d)?;
    p.class_token = Array1::from(src.get("cls_token", &[1, 1, d])?.data.clone());
    let pos = src.get("pos_embed", &[1, config.tokens(), d])?;
    p.positional = Array2::from_shape_vec((config.tokens(), d), pos.data.clone()).expect("shape checked");

    for (i, layer) in p.layers.iter_mut().enumerate() {
        let key = |s: &str| format!("blocks.{i}.{s}");
        layer.ln1_gamma = src.vector(&key("norm1.weight"), d)?;
        layer.ln1_beta = src.vector(&key("norm1.bias"), d)?;
        let qkv = src.linear(&key("attn.qkv.weight"), 3 * d, d)?;
        layer.w_q = qkv.slice(ndarray::s![.., 0..d]).to_owned();
        layer.w_k = qkv.slice(ndarray::s![.., d..2 * d]).to_owned();
        layer.w_v = qkv.slice(ndarray::s![.., 2 * d..]).to_owned();
        let qkv_b = src.vector(&key("attn.qkv.bias"), 3 * d)?;
        layer.b_q = qkv_b.slice(ndarray::s![0..d]).to_owned();
        layer.b_k = qkv_b.slice(ndarray::s![d..2 * d]).to_owned();
        layer.b_v = qkv_b.slice(ndarray::s![2 * d..]).to_owned();
        layer.w_o = src.linear(&key("attn.proj.weight"), d, d)?;
        layer.b_o = src.vector(&key("attn.proj.bias"), d)?;
        layer.ln2_gamma = src.vector(&key("norm2.weight"), d)?;
        layer.ln2_beta = src.vector(&key("norm2.bias"), d)?;
        layer.w_mlp1 = src.linear(&key("mlp.fc1.weight"), f, d)?;
        layer.b_mlp1 = src.vector(&key("mlp.fc1.bias"), f)?;
        layer.w_mlp2 = src.linear(&key("mlp.fc2.weight"), d, f)?;
        layer.b_mlp2 = src.vector(&key("mlp.fc2.bias"), d)?;
    }
    p.final_gamma = src.vector("norm.weight", d)?;
    p.final_beta = src.vector("norm.bias", d)?;
    if tensors.get("head.weight").is_some_and(|t| t.shape == [config.num_classes, d]) {
        p.head_w = src.linear("head.weight", config.num_classes, d)?;
        p.head_b = src.vector("head.bias", config.num_classes)?;
    }
    p.check_shapes()?;
    Ok(p)
}

/// Writes local parameters back out under timm names; inverse of
/// [`import_timm`] for every mapped tensor.
pub fn export_timm(params: &ViTParams) -> BTreeMap<String, RawTensor> {
    let cfg = params.config;
    let (d, f) = (cfg.hidden_dim, cfg.mlp_dim);
    let mut out = BTreeMap::new();
    let linear = |m: &Array2<f64>| -> Vec<f64> { m.t().iter().copied().collect() };
    let mut conv = vec![0.0; d * 3 * PATCH_SIDE * PATCH_SIDE];
    for ((row, o), &v) in params.patch_proj.indexed_iter() {
        let (pix, ch) = (row / 3, row % 3);
        let (r, c) = (pix / PATCH_SIDE, pix % PATCH_SIDE);
        conv[((o * 3 + ch) * PATCH_SIDE + r) * PATCH_SIDE + c] = v;
    }
    out.insert("patch_embed.proj.weight".into(), RawTensor::new(vec![d, 3, PATCH_SIDE, PATCH_SIDE], conv));
    out.insert("patch_embed.proj.bias".into(), RawTensor::new(vec![d], params.patch_bias.to_vec()));
    out.insert("cls_token".into(), RawTensor::new(vec![1, 1, d], params.class_token.to_vec()));
    out.insert(
        "pos_embed".into(),
        RawTensor::new(vec![1, cfg.tokens(), d], params.positional.iter().copied().collect()),
    );
    for (i, l) in params.layers.iter().enumerate() {
        let key = |s: &str| format!("blocks.{i}.{s}");
        let mut qkv = linear(&l.w_q);
        qkv.extend(linear(&l.w_k));
        qkv.extend(linear(&l.w_v));
        let mut qkv_b = l.b_q.to_vec();
        qkv_b.extend(l.b_k.iter());
        qkv_b.extend(l.b_v.iter());
        out.insert(key("norm1.weight"), RawTensor::new(vec![d], l.ln1_gamma.to_vec()));
        out.insert(key("norm1.bias"), RawTensor::new(vec![d], l.ln1_beta.to_vec()));
        out.insert(key("attn.qkv.weight"), RawTensor::new(vec![3 * d, d], qkv));
        out.insert(key("attn.qkv.bias"), RawTensor::new(vec![3 * d], qkv_b));
        out.insert(key("attn.proj.weight"), RawTensor::new(vec![d, d], linear(&l.w_o)));
        out.insert(key("attn.proj.bias"), RawTensor::new(vec![d], l.b_o.to_vec()));
        out.insert(key("norm2.weight"), RawTensor::new(vec![d], l.ln2_gamma.to_vec()));
        out.insert(key("norm2.bias"), RawTensor::new(vec![d], l.ln2_beta.to_vec()));
        out.insert(key("mlp.fc1.weight"), RawTensor::new(vec![f, d], linear(&l.w_mlp1)));
        out.insert(key("mlp.fc1.bias"), RawTensor::new(vec![f], l.b_mlp1.to_vec()));
        out.insert(key("mlp.fc2.weight"), RawTensor::new(vec![d, f], linear(&l.w_mlp2)));
        out.insert(key("mlp.fc2.bias"), RawTensor::new(vec![d], l.b_mlp2.to_vec()));
    }
    out.insert("norm.weight".into(), RawTensor::new(vec![d], params.final_gamma.to_vec()));
    out.insert("norm.bias".into(), RawTensor::new(vec![d], params.final_beta.to_vec()));
    out.insert("head.weight".into(), RawTensor::new(vec![cfg.num_classes, d], linear(&params.head_w)));
    out.insert("head.bias".into(), RawTensor::new(vec![cfg.num_classes], params.head_b.to_vec()));
    out
}
