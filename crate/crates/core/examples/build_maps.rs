//! Turns a synthetic clip into MEMSTmaps, saves them and renders PNGs.
//!
//! `cargo run --release --example build_maps -- [out_dir]`

use std::path::PathBuf;

use facepulse::dataset::{video_to_maps, MapSettings, VideoMaps};
use facepulse::ingest::synth::{synth_pulse_video, SynthSpec};
use facepulse::stmap::mems::{map_file_name, read_map, write_map};
use facepulse::stmap::Label;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("facepulse-maps"));
    std::fs::create_dir_all(&out)?;

    let spec = SynthSpec {
        duration: 9.0,
        noise_sigma: 1.0,
        region_phase: (0..15).map(|r| 0.2 * r as f64).collect(),
        ..SynthSpec::default()
    };
    let video = synth_pulse_video(&spec)?;
    let result = video_to_maps(&video.frames, &video.landmarks, "synthetic", Label::Real, &MapSettings::default())?;
    let VideoMaps::Maps { maps, warning, .. } = result else {
        anyhow::bail!("track unexpectedly discarded");
    };
    println!("{} frames -> {} maps", video.frames.len(), maps.len());
    if let Some(w) = warning {
        println!("warning: {w}");
    }
    for map in &maps {
        let path = out.join(map_file_name(map));
        write_map(map, &path)?;
        map.to_image().save(path.with_extension("png"))?;
        assert_eq!(read_map(&path)?, *map);
    }
    println!("wrote {} MEMS files and PNGs to {}", maps.len(), out.display());

    let short = synth_pulse_video(&SynthSpec { duration: 100.0 / 30.0, ..SynthSpec::default() })?;
    let result = video_to_maps(&short.frames, &short.landmarks, "short", Label::Real, &MapSettings::default())?;
    println!("100-frame clip -> {} maps", result.maps().len());
    Ok(())
}
