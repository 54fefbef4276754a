//! Converts a map into the transformer's 196 patches and tiles them into an
//! image.
//!
//! `cargo run --release --example patch_sequence -- [out.png]`

use facepulse::ingest::synth::{synth_pulse_video, SynthSpec};
use facepulse::dataset::{video_to_maps, MapSettings};
use facepulse::patchseq::{map_to_patches, PATCH_DIM};
use facepulse::stmap::Label;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("facepulse-patches.png").display().to_string());
    let video = synth_pulse_video(&SynthSpec { duration: 196.0 / 30.0, ..SynthSpec::default() })?;
    let maps = video_to_maps(&video.frames, &video.landmarks, "synthetic", Label::Real, &MapSettings::default())?.into_maps();
    let map = maps.first().ok_or_else(|| anyhow::anyhow!("no map produced"))?;

    let seq = map_to_patches(map);
    println!("{} patches of {} values", seq.len(), PATCH_DIM);
    for k in [0, 97, 195] {
        let column = map.column(k);
        let patch = seq.patch(k);
        let (lo, hi) = column.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let (plo, phi) = patch.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!("frame {k:3}: column range [{lo:.3}, {hi:.3}], patch range [{plo:.3}, {phi:.3}]");
    }
    seq.to_image().save(&out)?;
    println!("tiled patches written to {out}");
    Ok(())
}
