//! Built-in oracle checks.
//!
//! Every check is seeded and reports plain numbers, so two runs with the
//! same seed write byte-identical logs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decide::{video_verdict, MapPrediction};
use crate::error::{Error, Result};
use crate::ingest::synth::{synth_pulse_video, SynthSpec};
use crate::magnify::{bandpass_signal, gaussian_decompose, ideal_bandpass, amplify_composite, BandpassSpec};
use crate::patchseq::{column_to_patch, map_to_patches};
use crate::stmap::roi::roi_layout;
use crate::stmap::{stride_frames, window_and_normalize, window_count, Label, MemstMap, SignalGrid};
use crate::train::{finite_diff_check, train_loop_with, Sample, TrainConfig};
use crate::vit::{forward_patches, ViTConfig, ViTParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
}

impl CheckResult {
    fn new(check: &str, passed: bool, metrics: &[(&str, f64)]) -> Self {
        CheckResult {
            check: check.to_string(),
            passed,
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One JSON object per check, then a summary line.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for check in &self.checks {
            writeln!(out, "{}", serde_json::to_string(check).expect("plain data serializes"))?;
        }
        let summary = serde_json::json!({"summary": {"seed": self.seed, "passed": self.passed(), "checks": self.checks.len()}});
        writeln!(out, "{summary}")
    }
}

/// Amplitude of the `hz` component of a mean-removed signal.
pub fn tone_amplitude(signal: &[f64], fps: f64, hz: f64) -> f64 {
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let (re, im) = signal.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
        let a = 2.0 * PI * hz * t as f64 / fps;
        (re + (v - mean) * a.cos(), im - (v - mean) * a.sin())
    });
    2.0 * (re * re + im * im).sqrt() / n
}

/// Mean of `channel` over all face-region pixels, per frame.
fn roi_mean_signal(frames: &crate::ingest::FrameSequence, landmarks: &crate::ingest::Landmarks, channel: usize) -> Result<Vec<f64>> {
    let mask = roi_layout(landmarks)?.mask(frames.width(), frames.height());
    let pixels: Vec<(usize, usize)> = mask
        .indexed_iter()
        .filter(|(_, &m)| m != crate::stmap::roi::NO_REGION)
        .map(|(p, _)| p)
        .collect();
    Ok((0..frames.len())
        .map(|t| {
            let f = frames.frame(t);
            pixels.iter().map(|&(y, x)| f64::from(f[(y, x, channel)])).sum::<f64>() / pixels.len() as f64
        })
        .collect())
}

/// Gain of the RoI-mean tone after magnifying octave 1 by `alpha`.
pub fn evm_gain(pulse_hz: f64, alpha: f64) -> Result<f64> {
    let spec = SynthSpec {
        pulse_hz,
        ..SynthSpec::default()
    };
    let video = synth_pulse_video(&spec)?;
    let octaves = gaussian_decompose(&video.frames, 1)?;
    let filtered = ideal_bandpass(&octaves[0], &BandpassSpec::default())?;
    let out = amplify_composite(&video.frames, &filtered, alpha)?;
    let face = &video.landmarks.points[0];
    let before = tone_amplitude(&roi_mean_signal(&video.frames, face, spec.channel)?, spec.fps, pulse_hz);
    let after = tone_amplitude(&roi_mean_signal(&out, face, spec.channel)?, spec.fps, pulse_hz);
    Ok(after / before)
}

fn check_evm() -> Result<CheckResult> {
    let alpha = 10.0;
    let in_band = evm_gain(1.5, alpha)?;
    let out_band = evm_gain(5.0, alpha)?;
    let rel = (in_band - (1.0 + alpha)).abs() / (1.0 + alpha);
    Ok(CheckResult::new(
        "evm_amplification",
        rel <= 0.10 && out_band <= 1.05,
        &[("in_band_gain", in_band), ("expected_gain", 1.0 + alpha), ("out_of_band_gain", out_band)],
    ))
}

fn check_bandpass(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let band = BandpassSpec::default();
    let (n, fps) = (64, 30.0);
    let mask = band.bin_mask(n, fps);
    let mut worst_out: f64 = 0.0;
    let mut worst_in: f64 = 0.0;
    for _ in 0..20 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = bandpass_signal(&x, fps, &band)?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for k in 0..n {
            let dft = |s: &[f64]| {
                s.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    (re + v * a.cos(), im + v * a.sin())
                })
            };
            let (xr, xi) = dft(&x);
            let (yr, yi) = dft(&y);
            if mask[k] {
                worst_in = worst_in.max(((yr - xr).powi(2) + (yi - xi).powi(2)).sqrt() / norm);
            } else {
                worst_out = worst_out.max((yr * yr + yi * yi).sqrt() / norm);
            }
        }
    }
    Ok(CheckResult::new(
        "bandpass_exactness",
        worst_out < 1e-9 && worst_in < 1e-9,
        &[("max_out_of_band", worst_out), ("max_in_band_change", worst_in)],
    ))
}

fn random_grid(rng: &mut ChaCha8Rng, frames: usize) -> SignalGrid {
    SignalGrid {
        values: Array3::from_shape_fn((60, frames, 3), |_| rng.random_range(0.0..255.0)),
        source: "selftest".into(),
    }
}

fn check_maps(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut ok = true;
    for fps in [25.0, 30.0] {
        for t in [196, 300, 1000] {
            let out = window_and_normalize(&random_grid(rng, t), fps);
            let expected = window_count(t, stride_frames(fps, 0.5));
            ok &= out.maps.len() == expected && expected == (t - 196) / (0.5 * fps).round() as usize + 1;
            ok &= out
                .maps
                .iter()
                .all(|m| m.values.dim() == (60, 196, 3) && m.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
    // Per-row positive affine transforms leave maps unchanged.
    let mut invariant = 0;
    let trials = 10;
    for _ in 0..trials {
        let grid = random_grid(rng, 230);
        let mut moved = grid.clone();
        for mut row in moved.values.outer_iter_mut() {
            let (a, b) = (rng.random_range(0.1..10.0), rng.random_range(-50.0..50.0));
            row.mapv_inplace(|v| a * v + b);
        }
        invariant += usize::from(window_and_normalize(&grid, 30.0).maps == window_and_normalize(&moved, 30.0).maps);
    }
    ok &= invariant == trials;
    Ok(CheckResult::new("map_invariants", ok, &[("affine_trials_identical", invariant as f64)]))
}

fn check_patches(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut mismatches = 0;
    for _ in 0..200 {
        let column = Array2::from_shape_fn((60, 3), |_| rng.random::<f64>());
        let patch = column_to_patch(column.view());
        for c in 0..3 {
            let range = |it: &mut dyn Iterator<Item = f64>| it.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let a = range(&mut column.column(c).iter().copied());
            let b = range(&mut patch.index_axis(Axis(2), c).iter().copied());
            mismatches += usize::from(a != b);
        }
    }
    // A single changed column touches a single patch.
    let values = Array3::from_shape_fn((60, 196, 3), |_| rng.random::<f32>());
    let map = MemstMap::new(values.clone(), "p", 0, Label::Real)?;
    let mut changed = values;
    let k = rng.random_range(0..196);
    changed.index_axis_mut(Axis(1), k).mapv_inplace(|v| 1.0 - v);
    let a = map_to_patches(&map);
    let b = map_to_patches(&MemstMap::new(changed, "p", 0, Label::Real)?);
    let touched = (0..196).filter(|&i| a.patches.row(i) != b.patches.row(i)).count();
    Ok(CheckResult::new(
        "patch_locality_range",
        mismatches == 0 && touched == 1,
        &[("range_mismatches", mismatches as f64), ("patches_touched", touched as f64)],
    ))
}

fn random_sample(rng: &mut ChaCha8Rng, label: Label) -> Result<Sample> {
    let values = Array3::from_shape_fn((60, 196, 3), |_| rng.random::<f32>());
    Sample::from_map(&MemstMap::new(values, "s", 0, label)?)
}

fn check_gradients(rng: &mut ChaCha8Rng, seed: u64) -> Result<CheckResult> {
    let cfg = ViTConfig {
        dropout_rate: 0.0,
        ..ViTConfig::toy()
    };
    let params = ViTParams::random(cfg, 0.1, seed)?;
    let sample = random_sample(rng, Label::Fake)?;
    let report = finite_diff_check(&params, &sample, 1e-5, 210, seed)?;
    let mut metrics = vec![("max_relative_error", report.max_relative_error), ("kinds", report.per_kind.len() as f64)];
    metrics.extend(report.per_kind.iter().map(|(k, v)| (k.as_str(), *v)));
    Ok(CheckResult::new(
        "gradient_check",
        report.max_relative_error < 1e-4 && report.per_kind.len() == 7,
        &metrics,
    ))
}

fn check_permutation(rng: &mut ChaCha8Rng, seed: u64) -> Result<CheckResult> {
    let params = ViTParams::random(ViTConfig::toy(), 0.05, seed)?;
    let sample = random_sample(rng, Label::Real)?;
    let base = forward_patches(&sample.patches, &params, None)?;
    let mut identical = 0;
    let trials = 5;
    for _ in 0..trials {
        let mut perm: Vec<usize> = (0..196).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
        let mut p = params.clone();
        for (i, &src) in perm.iter().enumerate() {
            p.positional.row_mut(i + 1).assign(&params.positional.row(src + 1));
        }
        let out = forward_patches(&sample.patches.select(Axis(0), &perm), &p, None)?;
        identical += usize::from(out.probs == base.probs && out.descriptor == base.descriptor);
    }
    Ok(CheckResult::new(
        "permutation_equivariance",
        identical == trials,
        &[("identical", identical as f64), ("trials", trials as f64)],
    ))
}

fn check_verdicts() -> Result<CheckResult> {
    let run = |probs: &[[f64; 2]]| -> Result<Label> {
        let preds: Vec<MapPrediction> = probs.iter().enumerate().map(|(i, &p)| MapPrediction::new(i.to_string(), p)).collect();
        Ok(video_verdict("v", &preds)?.verdict)
    };
    let majority = run(&[[0.2, 0.8], [0.3, 0.7], [0.4, 0.6], [0.9, 0.1], [0.8, 0.2]])? == Label::Fake;
    let tie = run(&[[0.1, 0.9], [0.2, 0.8], [0.6, 0.4], [0.7, 0.3]])? == Label::Fake;
    let single = run(&[[0.7, 0.3]])? == Label::Real;
    Ok(CheckResult::new(
        "verdict_rules",
        majority && tie && single,
        &[("majority", f64::from(u8::from(majority))), ("tie", f64::from(u8::from(tie))), ("single", f64::from(u8::from(single)))],
    ))
}

/// A few epochs on a tiny synthetic set; records per-epoch metrics.
fn check_training(rng: &mut ChaCha8Rng, seed: u64) -> Result<CheckResult> {
    let data: Vec<Sample> = (0..8)
        .map(|i| random_sample(rng, Label::from_class(i % 2)))
        .collect::<Result<_>>()?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 3,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    };
    let mut losses = Vec::new();
    let outcome = train_loop_with(&data, &data, ViTConfig::toy(), &cfg, |m| losses.push(m.train_loss))?;
    let finite = outcome.params.is_finite() && losses.iter().all(|l| l.is_finite());
    let mut metrics: Vec<(String, f64)> = losses.iter().enumerate().map(|(i, l)| (format!("epoch{}_loss", i + 1), *l)).collect();
    let checksum: f64 = outcome.params.named_tensors().iter().map(|(_, t)| t.sum()).sum();
    metrics.push(("parameter_sum".into(), checksum));
    let refs: Vec<(&str, f64)> = metrics.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    Ok(CheckResult::new("short_training", finite, &refs))
}

/// Runs every check with the given seed.
pub fn run_selftest(seed: u64) -> Result<SelftestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        check_evm()?,
        check_bandpass(&mut rng)?,
        check_maps(&mut rng)?,
        check_patches(&mut rng)?,
        check_gradients(&mut rng, seed)?,
        check_permutation(&mut rng, seed)?,
        check_verdicts()?,
        check_training(&mut rng, seed)?,
    ];
    for c in &checks {
        log::info!("selftest {}: {}", c.check, if c.passed { "pass" } else { "FAIL" });
    }
    if checks.iter().any(|c| c.metrics.values().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("selftest metrics".into()));
    }
    Ok(SelftestReport { seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_amplitude_recovers_sine() {
        let x: Vec<f64> = (0..300).map(|t| 5.0 + 3.0 * (2.0 * PI * 1.5 * t as f64 / 30.0 + 0.4).sin()).collect();
        assert!((tone_amplitude(&x, 30.0, 1.5) - 3.0).abs() < 1e-9);
        assert!(tone_amplitude(&x, 30.0, 2.5) < 1e-9);
    }

    #[test]
    fn verdict_and_patch_checks_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(check_verdicts().unwrap().passed);
        assert!(check_patches(&mut rng).unwrap().passed);
        assert!(check_bandpass(&mut rng).unwrap().passed);
    }
}
