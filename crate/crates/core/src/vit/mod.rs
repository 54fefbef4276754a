//! Compact vision transformer over per-frame patches.
//!
//! Pre-norm encoder blocks (LayerNorm, multi-head self-attention, residual;
//! LayerNorm, GELU MLP, residual), a learned class token, learned positional
//! embeddings, a final LayerNorm on the class token and an affine + softmax
//! head.

pub mod import;
pub mod model;
pub mod weights;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patchseq::PATCH_DIM;
use crate::stmap::MAP_COLS;

pub use model::{classify_head, embed, encoder_forward, forward, forward_patches, Descriptor, ForwardTrace};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViTConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub num_patches: usize,
    pub patch_dim: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

impl Default for ViTConfig {
    fn default() -> Self {
        ViTConfig::toy()
    }
}

impl ViTConfig {
    /// ViT-Base/16 geometry.
    pub fn base() -> Self {
        ViTConfig {
            hidden_dim: 768,
            num_layers: 12,
            num_heads: 12,
            mlp_dim: 3072,
            num_patches: MAP_COLS,
            patch_dim: PATCH_DIM,
            num_classes: 2,
            dropout_rate: 0.1,
        }
    }

    /// Desk-scale configuration used for tests and the synthetic task.
    pub fn toy() -> Self {
        ViTConfig {
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            mlp_dim: 128,
            ..ViTConfig::base()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn tokens(&self) -> usize {
        self.num_patches + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("vit config: {m}")));
        if self.hidden_dim == 0 || self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.num_patches != MAP_COLS {
            return bad(format!("num_patches must be {MAP_COLS}, got {}", self.num_patches));
        }
        if self.patch_dim != PATCH_DIM {
            return bad(format!("patch_dim must be {PATCH_DIM}, got {}", self.patch_dim));
        }
        if self.num_classes != 2 {
            return bad(format!("num_classes must be 2, got {}", self.num_classes));
        }
        if self.mlp_dim == 0 {
            return bad("mlp_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
    pub w_mlp1: Array2<f64>,
    pub b_mlp1: Array1<f64>,
    pub w_mlp2: Array2<f64>,
    pub b_mlp2: Array1<f64>,
}

/// Every learnable tensor of the classifier. Weight matrices are stored
/// `(in, out)` so activations multiply from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTParams {
    pub config: ViTConfig,
    pub patch_proj: Array2<f64>,
    pub patch_bias: Array1<f64>,
    pub class_token: Array1<f64>,
    pub positional: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Array1<f64>,
    pub final_beta: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// Coarse grouping of tensors, used to make sure checks touch every kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TensorKind {
    Projection,
    ClassToken,
    Positional,
    Attention,
    Mlp,
    LayerNorm,
    Head,
}

impl TensorKind {
    pub fn of(name: &str) -> TensorKind {
        if name.starts_with("patch_") {
            TensorKind::Projection
        } else if name == "class_token" {
            TensorKind::ClassToken
        } else if name == "positional" {
            TensorKind::Positional
        } else if name.starts_with("head") {
            TensorKind::Head
        } else if name.contains(".attn.") {
            TensorKind::Attention
        } else if name.contains(".mlp.") {
            TensorKind::Mlp
        } else {
            TensorKind::LayerNorm
        }
    }
}

const LAYER_TENSORS: [&str; 16] = [
    "ln1.gamma",
    "ln1.beta",
    "attn.w_q",
    "attn.b_q",
    "attn.w_k",
    "attn.b_k",
    "attn.w_v",
    "attn.b_v",
    "attn.w_o",
    "attn.b_o",
    "ln2.gamma",
    "ln2.beta",
    "mlp.w1",
    "mlp.b1",
    "mlp.w2",
    "mlp.b2",
];

impl LayerParams {
    fn zeros(d: usize, f: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        LayerParams {
            ln1_gamma: Array1::ones(d),
            ln1_beta: v(d),
            w_q: m(d, d),
            b_q: v(d),
            w_k: m(d, d),
            b_k: v(d),
            w_v: m(d, d),
            b_v: v(d),
            w_o: m(d, d),
            b_o: v(d),
            ln2_gamma: Array1::ones(d),
            ln2_beta: v(d),
            w_mlp1: m(d, f),
            b_mlp1: v(f),
            w_mlp2: m(f, d),
            b_mlp2: v(d),
        }
    }

    fn tensors(&self) -> [ArrayViewD<'_, f64>; 16] {
        [
            self.ln1_gamma.view().into_dyn(),
            self.ln1_beta.view().into_dyn(),
            self.w_q.view().into_dyn(),
            self.b_q.view().into_dyn(),
            self.w_k.view().into_dyn(),
            self.b_k.view().into_dyn(),
            self.w_v.view().into_dyn(),
            self.b_v.view().into_dyn(),
            self.w_o.view().into_dyn(),
            self.b_o.view().into_dyn(),
            self.ln2_gamma.view().into_dyn(),
            self.ln2_beta.view().into_dyn(),
            self.w_mlp1.view().into_dyn(),
            self.b_mlp1.view().into_dyn(),
            self.w_mlp2.view().into_dyn(),
            self.b_mlp2.view().into_dyn(),
        ]
    }

    fn tensors_mut(&mut self) -> [ArrayViewMutD<'_, f64>; 16] {
        [
            self.ln1_gamma.view_mut().into_dyn(),
            self.ln1_beta.view_mut().into_dyn(),
            self.w_q.view_mut().into_dyn(),
            self.b_q.view_mut().into_dyn(),
            self.w_k.view_mut().into_dyn(),
            self.b_k.view_mut().into_dyn(),
            self.w_v.view_mut().into_dyn(),
            self.b_v.view_mut().into_dyn(),
            self.w_o.view_mut().into_dyn(),
            self.b_o.view_mut().into_dyn(),
            self.ln2_gamma.view_mut().into_dyn(),
            self.ln2_beta.view_mut().into_dyn(),
            self.w_mlp1.view_mut().into_dyn(),
            self.b_mlp1.view_mut().into_dyn(),
            self.w_mlp2.view_mut().into_dyn(),
            self.b_mlp2.view_mut().into_dyn(),
        ]
    }
}

impl ViTParams {
    /// All weights zero, LayerNorm scales one.
    pub fn zeros(config: ViTConfig) -> Result<Self> {
        config.validate()?;
        let (d, f, c) = (config.hidden_dim, config.mlp_dim, config.num_classes);
        Ok(ViTParams {
            config,
            patch_proj: Array2::zeros((config.patch_dim, d)),
            patch_bias: Array1::zeros(d),
            class_token: Array1::zeros(d),
            positional: Array2::zeros((config.tokens(), d)),
            layers: (0..config.num_layers).map(|_| LayerParams::zeros(d, f)).collect(),
            final_gamma: Array1::ones(d),
            final_beta: Array1::zeros(d),
            head_w: Array2::zeros((d, c)),
            head_b: Array1::zeros(c),
        })
    }

    /// Training initialization: weight matrices from a normal distribution
    /// with std 0.02 truncated at two standard deviations; biases, class
    /// token and positional embeddings zero; LayerNorm scales one.
    pub fn init(config: ViTConfig, seed: u64) -> Result<Self> {
        ViTParams::init_with(config, seed, PositionalInit::Zeros)
    }

    /// [`ViTParams::init`] with a choice of positional initialization.
    pub fn init_with(config: ViTConfig, seed: u64, positional: PositionalInit) -> Result<Self> {
        let mut params = ViTParams::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, mut t) in params.named_tensors_mut() {
            if t.ndim() == 2 && name != "positional" {
                t.map_inplace(|v| *v = truncated_normal(&mut rng, INIT_STD));
            }
        }
        match positional {
            PositionalInit::Zeros => {}
            PositionalInit::TruncatedNormal => {
                params.positional.mapv_inplace(|_| truncated_normal(&mut rng, INIT_STD));
            }
            PositionalInit::Sinusoidal { scale } => {
                params.positional = sinusoidal_positions(config.tokens(), config.hidden_dim) * scale;
            }
        }
        Ok(params)
    }

    /// Every tensor random (LayerNorm scales around one), for derivative
    /// checks that must exercise all parameter paths.
    pub fn random(config: ViTConfig, std: f64, seed: u64) -> Result<Self> {
        let mut params = ViTParams::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("positive std");
        for (name, mut t) in params.named_tensors_mut() {
            let base = if name.ends_with("gamma") { 1.0 } else { 0.0 };
            t.map_inplace(|v| *v = base + normal.sample(&mut rng));
        }
        Ok(params)
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["patch_projection", "patch_bias", "class_token", "positional"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for l in 0..self.layers.len() {
            names.extend(LAYER_TENSORS.iter().map(|t| format!("layers.{l}.{t}")));
        }
        names.extend(["final_ln.gamma", "final_ln.beta", "head.weight", "head.bias"].map(String::from));
        names
    }

    /// Tensors in a fixed order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut views = vec![
            self.patch_proj.view().into_dyn(),
            self.patch_bias.view().into_dyn(),
            self.class_token.view().into_dyn(),
            self.positional.view().into_dyn(),
        ];
        for layer in &self.layers {
            views.extend(layer.tensors());
        }
        views.extend([
            self.final_gamma.view().into_dyn(),
            self.final_beta.view().into_dyn(),
            self.head_w.view().into_dyn(),
            self.head_b.view().into_dyn(),
        ]);
        self.tensor_names().into_iter().zip(views).collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let names = self.tensor_names();
        let mut views = vec![
            self.patch_proj.view_mut().into_dyn(),
            self.patch_bias.view_mut().into_dyn(),
            self.class_token.view_mut().into_dyn(),
            self.positional.view_mut().into_dyn(),
        ];
        for layer in &mut self.layers {
            views.extend(layer.tensors_mut());
        }
        views.extend([
            self.final_gamma.view_mut().into_dyn(),
            self.final_beta.view_mut().into_dyn(),
            self.head_w.view_mut().into_dyn(),
            self.head_b.view_mut().into_dyn(),
        ]);
        names.into_iter().zip(views).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Checks every tensor shape against the config.
    pub fn check_shapes(&self) -> Result<()> {
        let reference = ViTParams::zeros(self.config)?;
        if self.layers.len() != self.config.num_layers {
            return Err(Error::Shape(format!(
                "{} layers for a {}-layer config",
                self.layers.len(),
                self.config.num_layers
            )));
        }
        for ((name, t), (_, r)) in self.named_tensors().iter().zip(reference.named_tensors()) {
            if t.shape() != r.shape() {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    r.shape()
                )));
            }
        }
        Ok(())
    }
}

/// How positional embeddings start out.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PositionalInit {
    #[default]
    Zeros,
    /// Same truncated normal as the weight matrices.
    TruncatedNormal,
    /// Fixed-frequency sine/cosine pairs times `scale`.
    Sinusoidal { scale: f64 },
}

/// `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(..)`.
pub fn sinusoidal_positions(tokens: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((tokens, d), |(t, j)| {
        let angle = t as f64 / 10000f64.powf((j - j % 2) as f64 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn truncated_normal(rng: &mut impl Rng, std: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}
