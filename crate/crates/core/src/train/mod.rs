//! Cross-entropy training with Adam.

mod backprop;
mod gradcheck;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backprop::Gradients;
pub use gradcheck::{finite_diff_against, finite_diff_check, GradCheckReport};

use crate::error::{Error, Result};
use crate::patchseq::map_to_patches;
use crate::stmap::MemstMap;
use crate::vit::{forward_patches, PositionalInit, ViTConfig, ViTParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop as soon as validation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub positional_init: PositionalInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            epochs: 60,
            batch_size: 32,
            dropout_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            target_accuracy: None,
            positional_init: PositionalInit::Zeros,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("train config: {m}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        Ok(())
    }
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy(logits: [f64; 2], label: usize) -> f64 {
    let max = logits[0].max(logits[1]);
    let lse = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
    lse - logits[label]
}

/// A flattened patch sequence with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patches: Array2<f64>,
    pub label: usize,
}

impl Sample {
    pub fn from_map(map: &MemstMap) -> Result<Self> {
        let label = map
            .label
            .class()
            .ok_or_else(|| Error::InvalidArgument(format!("map {} has no label", map.id())))?;
        Ok(Sample {
            patches: map_to_patches(map).patches,
            label,
        })
    }
}

/// Per-sample dropout seed derived from a batch seed.
fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Loss and gradients for one sample, weighted by `weight`.
fn sample_backward(sample: &Sample, params: &ViTParams, dropout_seed: Option<u64>, weight: f64) -> Result<(f64, Gradients, usize)> {
    let trace = forward_patches(&sample.patches, params, dropout_seed)?;
    let loss = cross_entropy(trace.logits, sample.label);
    let predicted = usize::from(trace.probs[1] > trace.probs[0]);
    Ok((loss, backprop::backward_trace(&trace, sample.label, params, weight), predicted))
}

struct BatchResult {
    loss: f64,
    grads: Gradients,
    correct: usize,
}

fn batch_backward(batch: &[&Sample], params: &ViTParams, dropout_seed: Option<u64>) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let weight = 1.0 / batch.len() as f64;
    let mut total = Gradients::zeros(params.config);
    let mut loss = 0.0;
    let mut correct = 0;
    // Work in chunks the size of the pool so memory stays bounded, and
    // reduce in sample order so the result is independent of scheduling.
    let chunk = rayon::current_num_threads().max(1);
    for (c, part) in batch.chunks(chunk).enumerate() {
        let results: Vec<Result<(f64, Gradients, usize)>> = part
            .par_iter()
            .enumerate()
            .map(|(i, s)| sample_backward(s, params, dropout_seed.map(|seed| sample_seed(seed, c * chunk + i)), weight))
            .collect();
        for (r, sample) in results.into_iter().zip(part) {
            let (l, g, predicted) = r?;
            loss += l * weight;
            correct += usize::from(predicted == sample.label);
            total.add_assign(&g);
        }
    }
    Ok(BatchResult { loss, grads: total, correct })
}

/// Mean cross-entropy over `batch` and its gradient. With a dropout seed
/// the descriptor dropout of the training configuration is active.
pub fn backward(batch: &[&MemstMap], params: &ViTParams, dropout_seed: Option<u64>) -> Result<(f64, Gradients)> {
    let samples = batch.iter().map(|m| Sample::from_map(m)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let out = batch_backward(&refs, params, dropout_seed)?;
    check_finite(out.loss, &out.grads, "backward")?;
    Ok((out.loss, out.grads))
}

fn check_finite(loss: f64, grads: &Gradients, context: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{context}: loss {loss}")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("{context}: gradient")));
    }
    Ok(())
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ViTParams,
    pub v: ViTParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: ViTConfig) -> Self {
        let zeros = Gradients::zeros(config).0;
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ViTParams, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let tensors = params
        .named_tensors_mut()
        .into_iter()
        .zip(grads.0.named_tensors())
        .zip(state.m.named_tensors_mut())
        .zip(state.v.named_tensors_mut());
    for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in tensors {
        ndarray::Zip::from(&mut p)
            .and(&g)
            .and(&mut m)
            .and(&mut v)
            .for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            });
    }
}

/// Accuracy and mean loss of eval-mode predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub loss: f64,
    pub count: usize,
}

/// Eval-mode class probabilities for every sample, in input order.
pub fn predict_samples(samples: &[Sample], params: &ViTParams) -> Result<Vec<[f64; 2]>> {
    samples
        .par_iter()
        .map(|s| forward_patches(&s.patches, params, None).map(|t| t.probs))
        .collect()
}

pub fn evaluate(samples: &[Sample], params: &ViTParams) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0;
    let mut loss = 0.0;
    for s in samples {
        let trace = forward_patches(&s.patches, params, None)?;
        loss += cross_entropy(trace.logits, s.label);
        correct += usize::from(usize::from(trace.probs[1] > trace.probs[0]) == s.label);
    }
    let n = samples.len() as f64;
    Ok(EvalSummary {
        accuracy: correct as f64 / n,
        loss: loss / n,
        count: samples.len(),
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters (final ones without a validation set).
    pub params: ViTParams,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

pub fn train_loop(train: &[Sample], val: &[Sample], vit: ViTConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_loop_with(train, val, vit, cfg, |_| {})
}

/// Trains from the standard initialization, calling `observe` after every
/// epoch.
pub fn train_loop_with(
    train: &[Sample],
    val: &[Sample],
    vit: ViTConfig,
    cfg: &TrainConfig,
    observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let vit = ViTConfig {
        dropout_rate: cfg.dropout_rate,
        ..vit
    };
    let params = ViTParams::init_with(vit, cfg.seed, cfg.positional_init)?;
    train_from(params, train, val, cfg, observe)
}

/// Continues training from given parameters.
pub fn train_from(
    mut params: ViTParams,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut state = AdamState::new(params.config);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ViTParams)> = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let seed = sample_seed(cfg.seed, epoch * 1_000_003 + step);
            let out = batch_backward(&batch, &params, Some(seed))?;
            check_finite(out.loss, &out.grads, &format!("epoch {epoch} step {step}"))?;
            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct;
            adam_step(&mut params, &out.grads, &mut state, cfg);
        }
        let n = train.len() as f64;
        let val_summary = if val.is_empty() { None } else { Some(evaluate(val, &params)?) };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss: val_summary.map(|s| s.loss),
            val_accuracy: val_summary.map(|s| s.accuracy),
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val acc {:?}",
            m.train_loss,
            m.train_accuracy,
            m.val_accuracy
        );
        observe(&m);
        metrics.push(m);
        if let Some(acc) = val_summary.map(|s| s.accuracy) {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, params.clone()));
            }
            if cfg.target_accuracy.is_some_and(|t| acc >= t) {
                break;
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => (params, metrics.len()),
    };
    Ok(TrainOutcome {
        params,
        best_epoch,
        metrics,
    })
}
