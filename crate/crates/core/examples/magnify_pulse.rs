//! Magnifies a faint synthetic pulse on each pyramid octave and reports how
//! much of the tone survives in the face region.
//!
//! `cargo run --release --example magnify_pulse -- [alpha]`

use facepulse::ingest::synth::{synth_pulse_video, SynthSpec};
use facepulse::magnify::{amplify_composite, gaussian_decompose, ideal_bandpass, magnify_set, BandpassSpec};
use facepulse::selftest::{evm_gain, tone_amplitude};
use facepulse::stmap::roi::{roi_layout, NO_REGION};

fn main() -> anyhow::Result<()> {
    let alpha: f64 = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(10.0);
    let spec = SynthSpec::default();
    let video = synth_pulse_video(&spec)?;
    let band = BandpassSpec::default();

    let octaves = gaussian_decompose(&video.frames, 3)?;
    for o in &octaves {
        println!("octave {}: {}x{}", o.level, o.width(), o.height());
    }

    let filtered = ideal_bandpass(&octaves[0], &band)?;
    let amplified = amplify_composite(&video.frames, &filtered, alpha)?;
    let mask = roi_layout(&video.landmarks.points[0])?.mask(spec.width, spec.height);
    let region_mean = |seq: &facepulse::ingest::FrameSequence| -> Vec<f64> {
        (0..seq.len())
            .map(|t| {
                let f = seq.frame(t);
                let (sum, n) = mask
                    .indexed_iter()
                    .filter(|(_, &m)| m != NO_REGION)
                    .fold((0.0, 0), |(s, n), ((y, x), _)| (s + f64::from(f[(y, x, spec.channel)]), n + 1));
                sum / n as f64
            })
            .collect()
    };
    let before = tone_amplitude(&region_mean(&video.frames), spec.fps, spec.pulse_hz);
    let after = tone_amplitude(&region_mean(&amplified), spec.fps, spec.pulse_hz);
    println!("{} Hz tone: {before:.3} -> {after:.3} (gain {:.2}, ideal {})", spec.pulse_hz, after / before, 1.0 + alpha);
    println!("5 Hz probe gain: {:.3}", evm_gain(5.0, alpha)?);

    let set = magnify_set(&video.frames, &band, [10.0, 20.0, 40.0])?;
    for (i, seq) in set.magnified.iter().enumerate() {
        let amp = tone_amplitude(&region_mean(seq), spec.fps, spec.pulse_hz);
        println!("stream {} (alpha {}): tone amplitude {amp:.3}", i + 1, set.alphas[i]);
    }
    Ok(())
}
