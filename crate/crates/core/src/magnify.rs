//! Eulerian color magnification.
//!
//! Each frame is reduced to Gaussian octaves (5-tap binomial blur, 2x
//! decimation). Every pixel's time series in an octave is band-passed with
//! an ideal FFT filter over the whole clip, scaled, upsampled back to full
//! resolution and added to the original frame with saturation.

use std::sync::Arc;

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::ingest::FrameSequence;

pub const DEFAULT_LEVELS: usize = 3;
pub const DEFAULT_ALPHAS: [f64; 3] = [10.0, 20.0, 40.0];
pub const MIN_OCTAVE_SIDE: f64 = 4.0;

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Heart-rate band in Hz.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BandpassSpec {
    pub f_low: f64,
    pub f_high: f64,
}

impl Default for BandpassSpec {
    fn default() -> Self {
        BandpassSpec {
            f_low: 0.75,
            f_high: 3.0,
        }
    }
}

impl BandpassSpec {
    pub fn new(f_low: f64, f_high: f64) -> Self {
        BandpassSpec { f_low, f_high }
    }

    pub fn validate(&self, fps: f64) -> Result<()> {
        if !(self.f_low > 0.0 && self.f_low < self.f_high && self.f_high < fps / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "band {}..{} Hz must satisfy 0 < low < high < fps/2 = {}",
                self.f_low,
                self.f_high,
                fps / 2.0
            )));
        }
        Ok(())
    }

    /// Which DFT bins of an `n`-point transform at `fps` are kept.
    pub fn bin_mask(&self, n: usize, fps: f64) -> Vec<bool> {
        (0..n)
            .map(|k| {
                let f = k.min(n - k) as f64 * fps / n as f64;
                k != 0 && f >= self.f_low && f <= self.f_high
            })
            .collect()
    }
}

/// One Gaussian octave of a video, real-valued, `(frames, h, w, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OctaveVideo {
    pub level: usize,
    pub data: Array4<f64>,
    pub fps: f64,
}

impl OctaveVideo {
    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

/// Original video plus one magnified copy per octave, all frame-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnifiedSet {
    pub original: FrameSequence,
    pub magnified: [FrameSequence; 3],
    pub alphas: [f64; 3],
}

impl MagnifiedSet {
    /// Original first, then octaves 1..=3.
    pub fn streams(&self) -> [&FrameSequence; 4] {
        [
            &self.original,
            &self.magnified[0],
            &self.magnified[1],
            &self.magnified[2],
        ]
    }
}

/// Image sizes `(h, w)` of every pyramid level, level 0 being the input.
pub fn pyramid_sizes(height: usize, width: usize, levels: usize) -> Vec<(usize, usize)> {
    let mut sizes = vec![(height, width)];
    for _ in 0..levels {
        let (h, w) = *sizes.last().unwrap();
        sizes.push((h.div_ceil(2), w.div_ceil(2)));
    }
    sizes
}

fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// One blur-and-decimate step on a single-channel image.
pub fn pyr_down(img: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut horiz = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for ox in 0..ow {
            let cx = 2 * ox as isize;
            horiz[(y, ox)] = BINOMIAL
                .iter()
                .enumerate()
                .map(|(i, k)| k * img[(y, reflect101(cx + i as isize - 2, w))])
                .sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for oy in 0..oh {
        let cy = 2 * oy as isize;
        for ox in 0..ow {
            out[(oy, ox)] = BINOMIAL
                .iter()
                .enumerate()
                .map(|(i, k)| k * horiz[(reflect101(cy + i as isize - 2, h), ox)])
                .sum();
        }
    }
    out
}

/// Bilinear resize with pixel-centre alignment.
pub fn resize_bilinear(img: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let xt = taps(w, out_w);
    let yt = taps(h, out_h);
    let mut rows = Array2::<f64>::zeros((h, out_w));
    for y in 0..h {
        for (ox, &(x0, x1, f)) in xt.iter().enumerate() {
            let (a, b) = (img[(y, x0)], img[(y, x1)]);
            rows[(y, ox)] = a + f * (b - a);
        }
    }
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for (oy, &(y0, y1, f)) in yt.iter().enumerate() {
        for ox in 0..out_w {
            let (a, b) = (rows[(y0, ox)], rows[(y1, ox)]);
            out[(oy, ox)] = a + f * (b - a);
        }
    }
    out
}

fn check_levels(height: usize, width: usize, levels: usize) -> Result<()> {
    let side = height.min(width) as f64 / 2f64.powi(levels as i32);
    if levels == 0 || side < MIN_OCTAVE_SIDE {
        return Err(Error::TooSmall { width, height, levels });
    }
    Ok(())
}

/// Decomposes every frame into `levels` Gaussian octaves (octave `k` blurred
/// and decimated `k` times), returned in order 1..=levels.
pub fn gaussian_decompose(video: &FrameSequence, levels: usize) -> Result<Vec<OctaveVideo>> {
    let (n, h, w) = (video.len(), video.height(), video.width());
    check_levels(h, w, levels)?;
    let sizes = pyramid_sizes(h, w, levels);

    // Per frame: Vec over levels of (h_k, w_k, 3) images.
    let per_frame: Vec<Vec<Array3<f64>>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let frame = video.frame(t);
            let mut current: Vec<Array2<f64>> = (0..3)
                .map(|c| frame.index_axis(Axis(2), c).mapv(f64::from))
                .collect();
            let mut out = Vec::with_capacity(levels);
            for &(lh, lw) in &sizes[1..] {
                current = current.iter().map(|ch| pyr_down(ch.view())).collect();
                let mut img = Array3::<f64>::zeros((lh, lw, 3));
                for (c, ch) in current.iter().enumerate() {
                    img.index_axis_mut(Axis(2), c).assign(ch);
                }
                out.push(img);
            }
            out
        })
        .collect();

    Ok((0..levels)
        .map(|k| {
            let (lh, lw) = sizes[k + 1];
            let mut data = Array4::<f64>::zeros((n, lh, lw, 3));
            for (t, levels) in per_frame.iter().enumerate() {
                data.index_axis_mut(Axis(0), t).assign(&levels[k]);
            }
            OctaveVideo {
                level: k + 1,
                data,
                fps: video.fps(),
            }
        })
        .collect())
}

/// Zero-phase ideal band-pass of every pixel/channel time series.
///
/// Bins whose absolute frequency `min(k, N-k) * fps / N` falls outside
/// `[f_low, f_high]` are zeroed, as is the DC bin.
pub fn ideal_bandpass(octave: &OctaveVideo, band: &BandpassSpec) -> Result<OctaveVideo> {
    let (n, h, w, c) = octave.data.dim();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "band-pass needs at least 4 frames, got {n}"
        )));
    }
    band.validate(octave.fps)?;
    let mask = band.bin_mask(n, octave.fps);
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    // Gather series as rows of a (pixels, frames) matrix.
    let pixels = h * w * c;
    let flat = octave
        .data
        .view()
        .into_shape_with_order((n, pixels))
        .expect("contiguous octave");
    let mut series = flat.t().as_standard_layout().into_owned();
    series
        .as_slice_mut()
        .expect("freshly owned")
        .par_chunks_mut(n)
        .for_each_init(
            || vec![Complex64::default(); n],
            |buf, row| filter_series(row, buf, &mask, &forward, &inverse),
        );
    let data = series
        .t()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, h, w, c))
        .expect("same element count");
    Ok(OctaveVideo {
        level: octave.level,
        data,
        fps: octave.fps,
    })
}

/// Band-passes one real series in place.
fn filter_series(
    x: &mut [f64],
    buf: &mut [Complex64],
    mask: &[bool],
    forward: &Arc<dyn Fft<f64>>,
    inverse: &Arc<dyn Fft<f64>>,
) {
    for (b, &v) in buf.iter_mut().zip(x.iter()) {
        *b = Complex64::new(v, 0.0);
    }
    forward.process(buf);
    for (b, &keep) in buf.iter_mut().zip(mask) {
        if !keep {
            *b = Complex64::default();
        }
    }
    inverse.process(buf);
    let scale = 1.0 / x.len() as f64;
    for (v, b) in x.iter_mut().zip(buf.iter()) {
        *v = b.re * scale;
    }
}

/// Band-pass of a single real signal; same filter as [`ideal_bandpass`].
pub fn bandpass_signal(signal: &[f64], fps: f64, band: &BandpassSpec) -> Result<Vec<f64>> {
    let n = signal.len();
    let data = Array4::from_shape_vec((n, 1, 1, 1), signal.to_vec())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let out = ideal_bandpass(&OctaveVideo { level: 1, data, fps }, band)?;
    Ok(out.data.iter().copied().collect())
}

/// Upsamples filtered octave content to full size, scales it by `alpha` and
/// adds it to the original with saturation to `[0, 255]`.
pub fn amplify_composite(original: &FrameSequence, filtered: &OctaveVideo, alpha: f64) -> Result<FrameSequence> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    let (n, h, w) = (original.len(), original.height(), original.width());
    let sizes = pyramid_sizes(h, w, filtered.level);
    let expected = (n, sizes[filtered.level].0, sizes[filtered.level].1, 3);
    if filtered.data.dim() != expected {
        return Err(Error::Shape(format!(
            "octave {} of a {h}x{w} video should be {:?}, got {:?}",
            filtered.level,
            expected,
            filtered.data.dim()
        )));
    }

    let frames: Vec<Array3<u8>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let frame = original.frame(t);
            let octave = filtered.data.index_axis(Axis(0), t);
            let mut out = Array3::<u8>::zeros((h, w, 3));
            for c in 0..3 {
                let mut up = octave.index_axis(Axis(2), c).to_owned();
                for level in (0..filtered.level).rev() {
                    let (lh, lw) = sizes[level];
                    up = resize_bilinear(up.view(), lh, lw);
                }
                Zip::from(out.index_axis_mut(Axis(2), c))
                    .and(frame.index_axis(Axis(2), c))
                    .and(&up)
                    .for_each(|o, &src, &delta| {
                        *o = (f64::from(src) + alpha * delta).clamp(0.0, 255.0).round() as u8;
                    });
            }
            out
        })
        .collect();

    let mut data = Array4::<u8>::zeros((n, h, w, 3));
    for (t, f) in frames.iter().enumerate() {
        data.index_axis_mut(Axis(0), t).assign(f);
    }
    FrameSequence::new(data, original.fps())
}

/// Magnifies octaves `1..=alphas.len()` with one gain per octave.
pub fn magnify_levels(video: &FrameSequence, band: &BandpassSpec, alphas: &[f64]) -> Result<Vec<FrameSequence>> {
    let octaves = gaussian_decompose(video, alphas.len())?;
    octaves
        .iter()
        .zip(alphas)
        .map(|(octave, &alpha)| {
            let filtered = ideal_bandpass(octave, band)?;
            amplify_composite(video, &filtered, alpha)
        })
        .collect()
}

/// Original plus three magnified videos.
pub fn magnify_set(video: &FrameSequence, band: &BandpassSpec, alphas: [f64; 3]) -> Result<MagnifiedSet> {
    let mut magnified = magnify_levels(video, band, &alphas)?.into_iter();
    let mut next = || magnified.next().expect("three octaves");
    Ok(MagnifiedSet {
        original: video.clone(),
        magnified: [next(), next(), next()],
        alphas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Direct O(N^2) DFT, independent of rustfft.
    fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    (re + v * a.cos(), im + v * a.sin())
                })
            })
            .collect()
    }

    fn sine(n: usize, fps: f64, hz: f64, amp: f64, offset: f64) -> Vec<f64> {
        (0..n)
            .map(|t| offset + amp * (2.0 * PI * hz * t as f64 / fps).sin())
            .collect()
    }

    fn constant_video(n: usize, h: usize, w: usize, color: [u8; 3]) -> FrameSequence {
        FrameSequence::new(Array4::from_shape_fn((n, h, w, 3), |(_, _, _, c)| color[c]), 30.0).unwrap()
    }

    #[test]
    fn constant_signal_filters_to_zero() {
        let out = bandpass_signal(&[42.0; 64], 30.0, &BandpassSpec::default()).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn in_band_sinusoid_passes() {
        let x = sine(300, 30.0, 1.5, 3.0, 100.0);
        let y = bandpass_signal(&x, 30.0, &BandpassSpec::default()).unwrap();
        let mean = x.iter().sum::<f64>() / 300.0;
        let err = x.iter().zip(&y).map(|(a, b)| (a - mean - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "max deviation {err}");
    }

    #[test]
    fn out_of_band_sinusoid_removed() {
        let x = sine(300, 30.0, 5.0, 3.0, 100.0);
        let y = bandpass_signal(&x, 30.0, &BandpassSpec::default()).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn band_outside_nyquist_rejected() {
        let x = vec![0.0; 64];
        assert!(bandpass_signal(&x, 5.0, &BandpassSpec::new(0.75, 3.0)).is_err());
        assert!(bandpass_signal(&x[..3], 30.0, &BandpassSpec::default()).is_err());
        assert!(bandpass_signal(&x, 30.0, &BandpassSpec::new(3.0, 0.75)).is_err());
    }

    #[test]
    fn out_of_band_spectrum_is_zero() {
        let n = 64;
        let band = BandpassSpec::default();
        let x: Vec<f64> = (0..n).map(|t| ((t * 7919) % 97) as f64 - 48.0).collect();
        let y = bandpass_signal(&x, 30.0, &band).unwrap();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (sx, sy) = (naive_dft(&x), naive_dft(&y));
        for (k, keep) in band.bin_mask(n, 30.0).into_iter().enumerate() {
            let (re, im) = sy[k];
            if keep {
                assert!((re - sx[k].0).abs() < 1e-9 * norm && (im - sx[k].1).abs() < 1e-9 * norm);
            } else {
                assert!(re.hypot(im) < 1e-9 * norm, "bin {k}");
            }
        }
    }

    #[test]
    fn constant_video_octaves_are_constant() {
        let video = constant_video(3, 64, 64, [10, 128, 250]);
        let octaves = gaussian_decompose(&video, 3).unwrap();
        let dims: Vec<_> = octaves.iter().map(|o| (o.height(), o.width())).collect();
        assert_eq!(dims, vec![(32, 32), (16, 16), (8, 8)]);
        for o in &octaves {
            for ((_, _, _, c), v) in o.data.indexed_iter() {
                assert!((v - [10.0, 128.0, 250.0][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_small_for_levels() {
        let video = constant_video(2, 28, 64, [0; 3]);
        assert!(matches!(gaussian_decompose(&video, 3), Err(Error::TooSmall { .. })));
        assert!(gaussian_decompose(&video, 2).is_ok());
    }

    /// 2-D convolution with the full 5x5 kernel, brute force.
    fn blur_decimate_oracle(img: &Array2<f64>) -> Array2<f64> {
        let (h, w) = img.dim();
        Array2::from_shape_fn((h.div_ceil(2), w.div_ceil(2)), |(oy, ox)| {
            let mut acc = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    let y = reflect101(2 * oy as isize + i as isize - 2, h);
                    let x = reflect101(2 * ox as isize + j as isize - 2, w);
                    acc += BINOMIAL[i] * BINOMIAL[j] * img[(y, x)];
                }
            }
            acc
        })
    }

    #[test]
    fn single_pixel_mass_quartered() {
        for (py, px) in [(3, 4), (4, 4), (3, 3), (5, 3)] {
            let mut img = Array2::<f64>::zeros((8, 8));
            img[(py, px)] = 255.0;
            let down = pyr_down(img.view());
            let oracle = blur_decimate_oracle(&img);
            assert!((down.sum() - 255.0 / 4.0).abs() < 1e-12);
            assert!((oracle.sum() - 255.0 / 4.0).abs() < 1e-12);
            for (a, b) in down.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gain_is_identity() {
        let data = Array4::from_shape_fn((40, 32, 32, 3), |(t, y, x, c)| ((t * 13 + y * 7 + x * 3 + c) % 256) as u8);
        let video = FrameSequence::new(data, 30.0).unwrap();
        let set = magnify_set(&video, &BandpassSpec::default(), [0.0; 3]).unwrap();
        for m in &set.magnified {
            assert_eq!(m, &video);
        }
    }

    #[test]
    fn constant_video_unchanged_by_any_gain() {
        let video = constant_video(32, 32, 32, [90, 160, 30]);
        let set = magnify_set(&video, &BandpassSpec::default(), [10.0, 200.0, 4000.0]).unwrap();
        for m in &set.magnified {
            assert_eq!(m, &video);
        }
    }

    #[test]
    fn composite_clamps() {
        let video = constant_video(8, 32, 32, [250, 5, 128]);
        let octaves = gaussian_decompose(&video, 1).unwrap();
        let mut bump = octaves[0].clone();
        bump.data.indexed_iter_mut().for_each(|((t, _, _, _), v)| *v = if t % 2 == 0 { 50.0 } else { -50.0 });
        let out = amplify_composite(&video, &bump, 3.0).unwrap();
        assert_eq!(out.frame(0)[(4, 4, 0)], 255);
        assert_eq!(out.frame(1)[(4, 4, 1)], 0);
    }

    #[test]
    fn composite_rejects_mismatched_octave() {
        let video = constant_video(8, 32, 32, [1, 2, 3]);
        let other = constant_video(8, 64, 64, [1, 2, 3]);
        let octaves = gaussian_decompose(&other, 1).unwrap();
        assert!(amplify_composite(&video, &octaves[0], 1.0).is_err());
    }

    #[test]
    fn odd_sizes_roundtrip_through_pyramid() {
        let video = constant_video(6, 45, 37, [1, 2, 3]);
        let magnified = magnify_levels(&video, &BandpassSpec::default(), &[5.0, 5.0]).unwrap();
        assert_eq!((magnified[1].height(), magnified[1].width()), (45, 37));
    }

    proptest::proptest! {
        #[test]
        fn bandpass_zeroes_every_out_of_band_bin(
            x in proptest::collection::vec(-100.0f64..100.0, 4..=64),
            fps in 6.5f64..60.0,
        ) {
            let band = BandpassSpec::default();
            let y = bandpass_signal(&x, fps, &band).unwrap();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let mask = band.bin_mask(x.len(), fps);
            for (k, ((yr, yi), (xr, xi))) in naive_dft(&y).into_iter().zip(naive_dft(&x)).enumerate() {
                if mask[k] {
                    proptest::prop_assert!((yr - xr).hypot(yi - xi) < 1e-9 * norm);
                } else {
                    proptest::prop_assert!(yr.hypot(yi) < 1e-9 * norm);
                }
            }
        }
    }
}
