//! Round-trips a synthetic clip through the on-disk formats and shows how
//! missing landmark frames are filled or cause a discard.
//!
//! `cargo run --release --example load_video -- [out_dir]`

use std::path::PathBuf;

use facepulse::ingest::fseq::{read_fseq, write_fseq};
use facepulse::ingest::synth::{synth_pulse_video, SynthSpec};
use facepulse::ingest::{load_frames, load_landmarks, validate_track, write_frame_dir, write_landmarks, TrackVerdict};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("facepulse-load-video"));
    let video = synth_pulse_video(&SynthSpec { duration: 2.0, noise_sigma: 1.0, ..SynthSpec::default() })?;

    let frames_dir = out.join("frames");
    write_frame_dir(&video.frames, &frames_dir)?;
    let fseq = out.join("clip.fseq");
    write_fseq(&video.frames, &fseq)?;

    // Drop landmarks for frames 10..14: five gaps are tolerated.
    let mut track = video.landmarks.clone();
    for t in 10..15 {
        track.valid[t] = false;
    }
    let landmarks = out.join("clip.landmarks.jsonl");
    write_landmarks(&track, &landmarks)?;

    let from_pngs = load_frames(&frames_dir, None)?;
    let from_fseq = read_fseq(&fseq)?;
    println!("png frames: {} at {} fps, identical to source: {}", from_pngs.len(), from_pngs.fps(), from_pngs == video.frames);
    println!("fseq identical to source: {}", from_fseq == video.frames);

    let loaded = load_landmarks(&landmarks, from_pngs.len())?;
    match validate_track(&loaded) {
        TrackVerdict::Accept { filled, .. } => println!("track accepted, interpolated frames {filled:?}"),
        TrackVerdict::Discard { invalid } => println!("track discarded ({invalid} invalid frames)"),
    }

    let mut sparse = loaded;
    for t in 20..32 {
        sparse.valid[t] = false;
    }
    println!("with 17 gaps: accepted = {}", validate_track(&sparse).is_accept());
    println!("files in {}", out.display());
    Ok(())
}
