//! Central-difference check of the analytic gradient.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backprop::backward_trace, cross_entropy, Gradients, Sample};
use crate::error::{Error, Result};
use crate::vit::{forward_patches, TensorKind, ViTParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub trials: usize,
    /// Worst relative error per tensor kind.
    pub per_kind: BTreeMap<String, f64>,
}

/// Below this magnitude the error is measured in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

fn eval_loss(params: &ViTParams, sample: &Sample) -> Result<f64> {
    let trace = forward_patches(&sample.patches, params, None)?;
    Ok(cross_entropy(trace.logits, sample.label))
}

/// Compares backprop against central differences at `trials` random
/// coordinates, cycling through the tensor kinds so each is covered.
/// Dropout is off.
pub fn finite_diff_check(params: &ViTParams, sample: &Sample, eps: f64, trials: usize, seed: u64) -> Result<GradCheckReport> {
    let trace = forward_patches(&sample.patches, params, None)?;
    let grads = backward_trace(&trace, sample.label, params, 1.0);
    finite_diff_against(params, sample, &grads, eps, trials, seed)
}

/// Like [`finite_diff_check`] but against a supplied gradient.
pub fn finite_diff_against(
    params: &ViTParams,
    sample: &Sample,
    grads: &Gradients,
    eps: f64,
    trials: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let names = params.tensor_names();
    let mut by_kind: BTreeMap<TensorKind, Vec<usize>> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        by_kind.entry(TensorKind::of(name)).or_default().push(i);
    }
    let kinds: Vec<TensorKind> = by_kind.keys().copied().collect();
    let analytic = grads.0.named_tensors();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        trials,
        per_kind: BTreeMap::new(),
    };
    for t in 0..trials {
        let kind = kinds[t % kinds.len()];
        let candidates = &by_kind[&kind];
        let tensor = candidates[rng.random_range(0..candidates.len())];
        let len = analytic[tensor].1.len();
        let flat = rng.random_range(0..len);

        let original = params.named_tensors()[tensor].1.iter().nth(flat).copied().expect("index in range");
        let set = |p: &mut ViTParams, v: f64| {
            let mut tensors = p.named_tensors_mut();
            *tensors[tensor].1.iter_mut().nth(flat).expect("index in range") = v;
        };
        set(&mut probe, original + eps);
        let plus = eval_loss(&probe, sample)?;
        set(&mut probe, original - eps);
        let minus = eval_loss(&probe, sample)?;
        set(&mut probe, original);

        let numeric = (plus - minus) / (2.0 * eps);
        let exact = *analytic[tensor].1.iter().nth(flat).expect("index in range");
        // Structurally zero gradients (key biases: softmax ignores a shift)
        // leave only roundoff, so small magnitudes are compared absolutely.
        let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(REL_FLOOR);
        report.max_relative_error = report.max_relative_error.max(rel);
        let slot = report.per_kind.entry(format!("{kind:?}").to_lowercase()).or_insert(0.0);
        *slot = slot.max(rel);
    }
    Ok(report)
}
