//! Synthetic pulsatile face videos with known ground truth.

use std::f64::consts::PI;

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{FrameSequence, LandmarkTrack, Landmarks, Point};
use crate::error::{Error, Result};
use crate::stmap::roi::{roi_layout, NO_REGION, ROI_COUNT};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// Seconds; the frame count is `round(duration * fps)`.
    pub duration: f64,
    pub pulse_hz: f64,
    /// Peak deviation of the pulsing channel, 8-bit units.
    pub pulse_amp: f64,
    pub base_color: [f64; 3],
    pub noise_sigma: f64,
    /// Phase offset per region in radians, cycled when shorter than 15.
    pub region_phase: Vec<f64>,
    /// Channel (0 = R, 1 = G, 2 = B) that carries the pulse.
    pub channel: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 64,
            height: 64,
            fps: 30.0,
            duration: 10.0,
            pulse_hz: 1.5,
            pulse_amp: 2.0,
            base_color: [170.0, 120.0, 100.0],
            noise_sigma: 0.0,
            region_phase: vec![0.0],
            channel: 1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn phase_of(&self, region: usize) -> f64 {
        if self.region_phase.is_empty() {
            0.0
        } else {
            self.region_phase[region % self.region_phase.len()]
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synth spec: {m}")));
        if self.width < 16 || self.height < 16 {
            return bad("frames must be at least 16x16");
        }
        if !(self.fps > 0.0 && self.duration > 0.0) || self.frame_count() == 0 {
            return bad("fps and duration must give at least one frame");
        }
        if !(self.pulse_amp >= 0.0 && self.noise_sigma >= 0.0 && self.pulse_hz >= 0.0) {
            return bad("amplitude, noise and frequency must be non-negative");
        }
        if self.channel > 2 {
            return bad("channel must be 0, 1 or 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionTruth {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub channel: usize,
    pub regions: Vec<RegionTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub frames: FrameSequence,
    pub landmarks: LandmarkTrack,
    pub truth: GroundTruth,
}

/// A frontal, axis-aligned "square" face: the jawline runs down the left
/// edge, along the chin and up the right edge; both brows sit on one line.
/// Nose, eyes and mouth are placed inside for completeness.
pub fn synthetic_face(width: usize, height: usize) -> Landmarks {
    let (w, h) = (width as f64, height as f64);
    let (left, right) = (0.125 * w, 0.875 * w);
    let (brow, chin) = (0.2 * h, 0.9 * h);
    let fw = right - left;
    let fh = chin - brow;
    let at = |fx: f64, fy: f64| Point::new(left + fx * fw, brow + fy * fh);
    std::array::from_fn(|i| match i {
        0..=4 => Point::new(left, brow + fh * i as f64 / 4.0),
        5..=11 => Point::new(left + fw * (i - 4) as f64 / 8.0, chin),
        12..=16 => Point::new(right, chin - fh * (i - 12) as f64 / 4.0),
        17..=26 => Point::new(left + fw * (i - 17) as f64 / 9.0, brow),
        27..=30 => at(0.5, 0.1 + 0.1 * (i - 27) as f64),
        31..=35 => at(0.4 + 0.05 * (i - 31) as f64, 0.5),
        36..=41 => at(0.2 + 0.04 * (i - 36) as f64, 0.15),
        42..=47 => at(0.6 + 0.04 * (i - 42) as f64, 0.15),
        48..=59 => at(0.3 + 0.4 * (i - 48) as f64 / 11.0, 0.75),
        _ => at(0.35 + 0.3 * (i - 60) as f64 / 7.0, 0.78),
    })
}

/// Renders a pulse video over the synthetic face layout.
///
/// Pixels of region `r` get `pulse_amp * sin(2 pi f t + phase_r)` added to
/// the pulse channel; every pixel gets independent Gaussian noise. Values
/// are rounded and saturated to 8 bits.
pub fn synth_pulse_video(spec: &SynthSpec) -> Result<SynthVideo> {
    spec.validate()?;
    let (w, h, n) = (spec.width, spec.height, spec.frame_count());
    let face = synthetic_face(w, h);
    let mask = roi_layout(&face)?.mask(w, h);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut data = Array4::<u8>::zeros((n, h, w, 3));
    for t in 0..n {
        let time = t as f64 / spec.fps;
        let pulse: Vec<f64> = (0..ROI_COUNT)
            .map(|r| spec.pulse_amp * (2.0 * PI * spec.pulse_hz * time + spec.phase_of(r)).sin())
            .collect();
        for y in 0..h {
            for x in 0..w {
                let region = mask[(y, x)];
                for c in 0..3 {
                    let mut v = spec.base_color[c];
                    if c == spec.channel && region != NO_REGION {
                        v += pulse[region as usize];
                    }
                    if spec.noise_sigma > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    data[(t, y, x, c)] = v.clamp(0.0, 255.0).round() as u8;
                }
            }
        }
    }

    let truth = GroundTruth {
        channel: spec.channel,
        regions: (0..ROI_COUNT)
            .map(|r| RegionTruth {
                amplitude: spec.pulse_amp,
                frequency: spec.pulse_hz,
                phase: spec.phase_of(r),
            })
            .collect(),
    };
    Ok(SynthVideo {
        frames: FrameSequence::new(data, spec.fps)?,
        landmarks: LandmarkTrack::constant(face, n),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stmap::roi::ROI_COUNT;

    fn region_mean_signal(video: &SynthVideo, region: u8, channel: usize) -> Vec<f64> {
        let mask = roi_layout(&video.landmarks.points[0]).unwrap().mask(video.frames.width(), video.frames.height());
        (0..video.frames.len())
            .map(|t| {
                let frame = video.frames.frame(t);
                let (sum, n) = mask
                    .indexed_iter()
                    .filter(|(_, &m)| m == region)
                    .fold((0.0, 0), |(s, n), ((y, x), _)| (s + frame[(y, x, channel)] as f64, n + 1));
                sum / n as f64
            })
            .collect()
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let spec = SynthSpec { pulse_amp: 0.0, ..SynthSpec::default() };
        let v = synth_pulse_video(&spec).unwrap();
        let first = v.frames.frame(0).to_owned();
        for t in 1..v.frames.len() {
            assert_eq!(v.frames.frame(t), first);
        }
    }

    #[test]
    fn pulse_peaks_at_its_bin() {
        let spec = SynthSpec { pulse_amp: 6.0, ..SynthSpec::default() };
        let v = synth_pulse_video(&spec).unwrap();
        assert_eq!(v.frames.len(), 300);
        let signal = region_mean_signal(&v, 7, 1);
        let n = signal.len();
        let mag = |k: usize| {
            let (re, im) = signal.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &s)| {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                (re + s * a.cos(), im + s * a.sin())
            });
            re.hypot(im)
        };
        let peak = (1..n / 2).max_by(|&a, &b| mag(a).total_cmp(&mag(b))).unwrap();
        assert_eq!(peak, 15);
    }

    #[test]
    fn opposite_phases_are_anti_correlated() {
        let spec = SynthSpec {
            pulse_amp: 8.0,
            region_phase: vec![0.0, PI],
            ..SynthSpec::default()
        };
        let v = synth_pulse_video(&spec).unwrap();
        let a = region_mean_signal(&v, 0, 1);
        let b = region_mean_signal(&v, 1, 1);
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!(corr < -0.95, "correlation {corr}");
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let spec = SynthSpec { noise_sigma: 2.0, seed: 9, duration: 1.0, ..SynthSpec::default() };
        let a = synth_pulse_video(&spec).unwrap();
        let b = synth_pulse_video(&spec).unwrap();
        assert_eq!(a.frames, b.frames);
        let c = synth_pulse_video(&SynthSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn landmarks_inside_frame() {
        let v = synth_pulse_video(&SynthSpec { duration: 0.5, ..SynthSpec::default() }).unwrap();
        v.landmarks.ensure_within(64, 64).unwrap();
        assert_eq!(v.truth.regions.len(), ROI_COUNT);
    }
}
