//! Video-to-maps pipeline and JSON-lines dataset manifests.
//!
//! A manifest line looks like
//! `{"video": "clips/a", "landmarks": "clips/a.jsonl", "label": "fake", "split": "train"}`.
//! Relative paths are resolved against the manifest's directory.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{load_frames, load_landmarks, validate_track, FrameSequence, LandmarkTrack, TrackVerdict};
use crate::magnify::{magnify_set, BandpassSpec, DEFAULT_ALPHAS};
use crate::stmap::{extract_signals, window_and_normalize_with, Label, MemstMap, DEFAULT_STRIDE_SECONDS};

/// Parameters of the video-to-maps stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapSettings {
    pub band: BandpassSpec,
    pub alphas: [f64; 3],
    pub stride_seconds: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        MapSettings {
            band: BandpassSpec::default(),
            alphas: DEFAULT_ALPHAS,
            stride_seconds: DEFAULT_STRIDE_SECONDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VideoMaps {
    /// Maps in window order; `warning` is set for clips shorter than one
    /// window.
    Maps {
        maps: Vec<MemstMap>,
        filled_frames: Vec<usize>,
        warning: Option<String>,
    },
    /// The landmark track had too many invalid frames.
    Discarded { invalid_frames: usize },
}

impl VideoMaps {
    pub fn maps(&self) -> &[MemstMap] {
        match self {
            VideoMaps::Maps { maps, .. } => maps,
            VideoMaps::Discarded { .. } => &[],
        }
    }

    pub fn into_maps(self) -> Vec<MemstMap> {
        match self {
            VideoMaps::Maps { maps, .. } => maps,
            VideoMaps::Discarded { .. } => Vec::new(),
        }
    }
}

/// Validate landmarks, magnify, extract region signals and cut windows.
pub fn video_to_maps(
    frames: &FrameSequence,
    track: &LandmarkTrack,
    source: &str,
    label: Label,
    settings: &MapSettings,
) -> Result<VideoMaps> {
    if track.len() != frames.len() {
        return Err(Error::Shape(format!(
            "{} landmark frames for {} video frames",
            track.len(),
            frames.len()
        )));
    }
    let (track, filled_frames) = match validate_track(track) {
        TrackVerdict::Accept { track, filled } => (track, filled),
        TrackVerdict::Discard { invalid } => {
            log::warn!("{source}: discarded, {invalid} frames without landmarks");
            return Ok(VideoMaps::Discarded { invalid_frames: invalid });
        }
    };
    track.ensure_within(frames.width(), frames.height())?;
    let set = magnify_set(frames, &settings.band, settings.alphas)?;
    let grid = extract_signals(&set, &track, source)?;
    let windowed = window_and_normalize_with(&grid, frames.fps(), settings.stride_seconds);
    Ok(VideoMaps::Maps {
        maps: windowed.maps.into_iter().map(|m| m.with_label(label)).collect(),
        filled_frames,
        warning: windowed.warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video: PathBuf,
    pub landmarks: PathBuf,
    pub label: Label,
    pub split: Split,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::open(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))?;
        entry.video = base.join(&entry.video);
        entry.landmarks = base.join(&entry.landmarks);
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    Ok(entries)
}

/// Loads one manifest entry from disk and turns it into labeled maps.
pub fn entry_maps(entry: &ManifestEntry, settings: &MapSettings, fps_override: Option<f64>) -> Result<VideoMaps> {
    let frames = load_frames(&entry.video, fps_override)?;
    let track = load_landmarks(&entry.landmarks, frames.len())?;
    video_to_maps(&frames, &track, &entry.video.display().to_string(), entry.label, settings)
}

/// Maps of every entry, grouped by split.
#[derive(Debug, Clone, Default)]
pub struct SplitMaps {
    pub train: Vec<MemstMap>,
    pub val: Vec<MemstMap>,
    pub test: Vec<MemstMap>,
}

impl SplitMaps {
    pub fn get(&self, split: Split) -> &[MemstMap] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut Vec<MemstMap> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

pub fn manifest_maps(entries: &[ManifestEntry], settings: &MapSettings, fps_override: Option<f64>) -> Result<SplitMaps> {
    let mut out = SplitMaps::default();
    for entry in entries {
        let maps = entry_maps(entry, settings, fps_override)?.into_maps();
        out.get_mut(entry.split).extend(maps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth::{synth_pulse_video, SynthSpec};
    use crate::ingest::write_landmarks;

    #[test]
    fn pulse_video_gives_expected_window_count() {
        let video = synth_pulse_video(&SynthSpec {
            width: 32,
            height: 32,
            duration: 7.0,
            ..SynthSpec::default()
        })
        .unwrap();
        let out = video_to_maps(&video.frames, &video.landmarks, "v", Label::Real, &MapSettings::default()).unwrap();
        // 210 frames, stride 15
        assert_eq!(out.maps().len(), 1);
        assert!(out.maps().iter().all(|m| m.label == Label::Real));
    }

    #[test]
    fn short_video_yields_warning_not_error() {
        let video = synth_pulse_video(&SynthSpec {
            width: 32,
            height: 32,
            duration: 100.0 / 30.0,
            ..SynthSpec::default()
        })
        .unwrap();
        match video_to_maps(&video.frames, &video.landmarks, "v", Label::Real, &MapSettings::default()).unwrap() {
            VideoMaps::Maps { maps, warning, .. } => {
                assert!(maps.is_empty());
                assert!(warning.is_some());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn faceless_video_is_discarded() {
        let video = synth_pulse_video(&SynthSpec {
            width: 32,
            height: 32,
            duration: 1.0,
            ..SynthSpec::default()
        })
        .unwrap();
        let mut track = video.landmarks.clone();
        track.valid.iter_mut().take(11).for_each(|v| *v = false);
        let out = video_to_maps(&video.frames, &track, "v", Label::Fake, &MapSettings::default()).unwrap();
        assert_eq!(out, VideoMaps::Discarded { invalid_frames: 11 });
    }

    #[test]
    fn landmarks_outside_frame_rejected() {
        let video = synth_pulse_video(&SynthSpec {
            width: 32,
            height: 32,
            duration: 1.0,
            ..SynthSpec::default()
        })
        .unwrap();
        let track = video.landmarks.translated(40.0, 0.0);
        assert!(video_to_maps(&video.frames, &track, "v", Label::Fake, &MapSettings::default()).is_err());
    }

    #[test]
    fn manifest_paths_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let video = synth_pulse_video(&SynthSpec {
            width: 32,
            height: 32,
            duration: 7.0,
            ..SynthSpec::default()
        })
        .unwrap();
        crate::ingest::fseq::write_fseq(&video.frames, &dir.path().join("a.fseq")).unwrap();
        write_landmarks(&video.landmarks, &dir.path().join("a.jsonl")).unwrap();
        let manifest = dir.path().join("manifest.jsonl");
        std::fs::write(
            &manifest,
            "{\"video\":\"a.fseq\",\"landmarks\":\"a.jsonl\",\"label\":\"real\",\"split\":\"val\"}\n\n",
        )
        .unwrap();
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].split, Split::Val);
        let maps = manifest_maps(&entries, &MapSettings::default(), None).unwrap();
        assert_eq!((maps.train.len(), maps.val.len(), maps.test.len()), (0, 1, 0));
    }

    #[test]
    fn malformed_manifest_line_reported() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.jsonl");
        std::fs::write(&manifest, "{\"video\":\"a\"}\n").unwrap();
        assert!(matches!(read_manifest(&manifest), Err(Error::Format { .. })));
    }
}
