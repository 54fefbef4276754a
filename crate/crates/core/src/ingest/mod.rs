//! Frame and landmark ingestion.
//!
//! Frames come either from a directory of PNG/PPM images (ordered by file
//! name, frame rate from an `fps.txt` sidecar or an explicit override) or
//! from the raw `FSEQ` container. Landmarks are precomputed 68-point tracks
//! stored as JSON lines.

pub mod fseq;
pub mod synth;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::{Array4, ArrayView3};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Number of facial landmarks per frame.
pub const LANDMARK_COUNT: usize = 68;

/// A video is discarded when more than this many frames lack a face.
pub const MAX_MISSING_FRAMES: usize = 10;

/// Decoded 8-bit RGB video, stored as `(frames, height, width, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    data: Array4<u8>,
    fps: f64,
}

impl FrameSequence {
    pub fn new(data: Array4<u8>, fps: f64) -> Result<Self> {
        let (n, h, w, c) = data.dim();
        if n == 0 {
            return Err(Error::Empty("frame sequence"));
        }
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "frames must be HxWx3 with H, W > 0, got {h}x{w}x{c}"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        Ok(FrameSequence { data, fps })
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, u8> {
        self.data.index_axis(ndarray::Axis(0), t)
    }

    pub fn data(&self) -> &Array4<u8> {
        &self.data
    }

    pub fn into_data(self) -> Array4<u8> {
        self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

pub type Landmarks = [Point; LANDMARK_COUNT];

/// Per-frame 68-point landmarks. Frames where no face (or no landmark fit)
/// was found carry `valid == false` and placeholder points.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrack {
    pub points: Vec<Landmarks>,
    pub valid: Vec<bool>,
}

impl LandmarkTrack {
    pub fn new(points: Vec<Landmarks>, valid: Vec<bool>) -> Result<Self> {
        if points.len() != valid.len() {
            return Err(Error::Shape(format!(
                "{} landmark frames but {} validity flags",
                points.len(),
                valid.len()
            )));
        }
        Ok(LandmarkTrack { points, valid })
    }

    /// Every frame valid, same landmarks throughout.
    pub fn constant(points: Landmarks, frames: usize) -> Self {
        LandmarkTrack {
            points: vec![points; frames],
            valid: vec![true; frames],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// Checks that every valid frame's points lie inside a `width x height` image.
    pub fn ensure_within(&self, width: usize, height: usize) -> Result<()> {
        let (w, h) = (width as f64, height as f64);
        for (t, (pts, ok)) in self.points.iter().zip(&self.valid).enumerate() {
            if !ok {
                continue;
            }
            if let Some(p) = pts
                .iter()
                .find(|p| !(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h))
            {
                return Err(Error::InvalidArgument(format!(
                    "frame {t}: landmark ({}, {}) outside {width}x{height}",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }

    /// Translates every point by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let points = self
            .points
            .iter()
            .map(|pts| pts.map(|p| Point::new(p.x + dx, p.y + dy)))
            .collect();
        LandmarkTrack {
            points,
            valid: self.valid.clone(),
        }
    }
}

/// Outcome of the face-tracking discard rule.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackVerdict {
    /// Track kept; `filled` lists the frames whose points were interpolated.
    Accept {
        track: LandmarkTrack,
        filled: Vec<usize>,
    },
    Discard {
        invalid: usize,
    },
}

impl TrackVerdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, TrackVerdict::Accept { .. })
    }

    pub fn into_track(self) -> Option<LandmarkTrack> {
        match self {
            TrackVerdict::Accept { track, .. } => Some(track),
            TrackVerdict::Discard { .. } => None,
        }
    }
}

/// Applies the discard rule (more than [`MAX_MISSING_FRAMES`] invalid frames)
/// and fills the remaining gaps.
///
/// Gaps between two valid frames are linearly interpolated per point; gaps at
/// either end copy the nearest valid frame. The accepted track has every
/// frame marked valid.
pub fn validate_track(track: &LandmarkTrack) -> TrackVerdict {
    let invalid = track.invalid_count();
    if invalid > MAX_MISSING_FRAMES || invalid == track.len() {
        return TrackVerdict::Discard { invalid };
    }
    let valid_idx: Vec<usize> = (0..track.len()).filter(|&t| track.valid[t]).collect();
    let mut points = track.points.clone();
    let mut filled = Vec::with_capacity(invalid);
    for t in (0..track.len()).filter(|&t| !track.valid[t]) {
        let next = valid_idx.partition_point(|&v| v < t);
        let after = valid_idx.get(next).copied();
        let before = next.checked_sub(1).map(|i| valid_idx[i]);
        points[t] = match (before, after) {
            (Some(a), Some(b)) => {
                let w = (t - a) as f64 / (b - a) as f64;
                let (pa, pb) = (&track.points[a], &track.points[b]);
                std::array::from_fn(|i| {
                    Point::new(lerp(pa[i].x, pb[i].x, w), lerp(pa[i].y, pb[i].y, w))
                })
            }
            (Some(a), None) => track.points[a],
            (None, Some(b)) => track.points[b],
            (None, None) => unreachable!("track has at least one valid frame"),
        };
        filled.push(t);
    }
    TrackVerdict::Accept {
        track: LandmarkTrack {
            points,
            valid: vec![true; track.len()],
        },
        filled,
    }
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    let v = a + w * (b - a);
    v.clamp(a.min(b), a.max(b))
}

/// Loads a frame sequence from a directory of images or an `FSEQ` file.
///
/// `fps_override` takes precedence over `fps.txt` and over the container header.
pub fn load_frames(path: &Path, fps_override: Option<f64>) -> Result<FrameSequence> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    if path.is_file() {
        let seq = fseq::read_fseq(path)?;
        return match fps_override {
            Some(fps) => FrameSequence::new(seq.into_data(), fps),
            None => Ok(seq),
        };
    }

    let files = list_frame_files(path)?;
    if files.is_empty() {
        return Err(Error::NoFrames(path.to_path_buf()));
    }
    let fps = match fps_override {
        Some(fps) => fps,
        None => read_fps_sidecar(path)?,
    };

    let first = decode_rgb(&files[0])?;
    let (w, h) = first.dimensions();
    let mut data = Array4::<u8>::zeros((files.len(), h as usize, w as usize, 3));
    for (t, file) in files.iter().enumerate() {
        let img = if t == 0 { first.clone() } else { decode_rgb(file)? };
        if img.dimensions() != (w, h) {
            return Err(Error::InconsistentDimensions {
                path: file.clone(),
                expected: (w, h),
                found: img.dimensions(),
            });
        }
        let mut frame = data.index_axis_mut(ndarray::Axis(0), t);
        for (dst, src) in frame.iter_mut().zip(img.as_raw()) {
            *dst = *src;
        }
    }
    FrameSequence::new(data, fps)
}

fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "ppm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn decode_rgb(path: &Path) -> Result<image::RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn read_fps_sidecar(dir: &Path) -> Result<f64> {
    let sidecar = dir.join("fps.txt");
    let text = match fs::read_to_string(&sidecar) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFps(dir.to_path_buf()))
        }
        Err(e) => return Err(Error::io(sidecar, e)),
    };
    let fps: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::format("fps.txt", format!("not a number: {:?}", text.trim())))?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::format("fps.txt", format!("fps must be positive, got {fps}")));
    }
    Ok(fps)
}

/// Writes frames as `frame_%06d.png` plus an `fps.txt` sidecar.
pub fn write_frame_dir(seq: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..seq.len() {
        let frame = seq.frame(t);
        let raw: Vec<u8> = frame.iter().copied().collect();
        let img = image::RgbImage::from_raw(seq.width() as u32, seq.height() as u32, raw)
            .expect("buffer matches dimensions");
        let path = dir.join(format!("frame_{t:06}.png"));
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    let sidecar = dir.join("fps.txt");
    fs::write(&sidecar, format!("{}\n", seq.fps())).map_err(|e| Error::io(sidecar, e))
}

#[derive(Deserialize)]
struct LandmarkRecord {
    frame: usize,
    points: Vec<[f64; 2]>,
}

/// Reads a JSON-lines landmark file for a video of `frames` frames.
///
/// Frames without a record are marked invalid. Blank lines are skipped.
pub fn load_landmarks(path: &Path, frames: usize) -> Result<LandmarkTrack> {
    let file = fs::File::open(path).map_err(|e| Error::open(path, e))?;
    parse_landmarks(BufReader::new(file), frames).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_landmarks(reader: impl BufRead, frames: usize) -> Result<LandmarkTrack> {
    let mut points = vec![[Point::default(); LANDMARK_COUNT]; frames];
    let mut valid = vec![false; frames];
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<landmarks>", e))?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LandmarkRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("landmark record", format!("line {line_no}: {e}")))?;
        if rec.points.len() != LANDMARK_COUNT {
            return Err(Error::PointCount {
                line: line_no,
                found: rec.points.len(),
            });
        }
        if rec.frame >= frames {
            return Err(Error::FrameOutOfRange {
                line: line_no,
                frame: rec.frame,
                frames,
            });
        }
        if rec.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::format(
                "landmark record",
                format!("line {line_no}: non-finite coordinate"),
            ));
        }
        points[rec.frame] = std::array::from_fn(|k| Point::new(rec.points[k][0], rec.points[k][1]));
        valid[rec.frame] = true;
    }
    Ok(LandmarkTrack { points, valid })
}

/// Serializes the valid frames of a track in the JSON-lines landmark format.
pub fn write_landmarks(track: &LandmarkTrack, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (t, (pts, ok)) in track.points.iter().zip(&track.valid).enumerate() {
        if !ok {
            continue;
        }
        let pts: Vec<[f64; 2]> = pts.iter().map(|p| [p.x, p.y]).collect();
        let line = serde_json::json!({ "frame": t, "points": pts });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points(offset: f64) -> Landmarks {
        std::array::from_fn(|i| Point::new(i as f64 + offset, 2.0 * i as f64 + offset))
    }

    fn track_with_gaps(frames: usize, gaps: &[usize]) -> LandmarkTrack {
        let points = (0..frames).map(|t| grid_points(t as f64)).collect();
        let valid = (0..frames).map(|t| !gaps.contains(&t)).collect();
        LandmarkTrack::new(points, valid).unwrap()
    }

    #[test]
    fn eleven_missing_frames_discard() {
        let gaps: Vec<usize> = (20..31).collect();
        let verdict = validate_track(&track_with_gaps(300, &gaps));
        assert_eq!(verdict, TrackVerdict::Discard { invalid: 11 });
    }

    #[test]
    fn ten_missing_frames_accept_and_interpolate() {
        let gaps: Vec<usize> = (20..30).collect();
        let TrackVerdict::Accept { track, filled } = validate_track(&track_with_gaps(300, &gaps))
        else {
            panic!("expected accept");
        };
        assert_eq!(filled, gaps);
        assert!(track.valid.iter().all(|v| *v));
        // Points move linearly with t, so interpolation recovers them.
        for t in 20..30 {
            for (p, q) in track.points[t].iter().zip(grid_points(t as f64).iter()) {
                assert!((p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complete_track_unchanged() {
        let track = track_with_gaps(50, &[]);
        let TrackVerdict::Accept { track: out, filled } = validate_track(&track) else {
            panic!("expected accept");
        };
        assert!(filled.is_empty());
        assert_eq!(out, track);
    }

    #[test]
    fn ends_copy_nearest_valid() {
        let track = track_with_gaps(20, &[0, 1, 19]);
        let out = validate_track(&track).into_track().unwrap();
        assert_eq!(out.points[0], track.points[2]);
        assert_eq!(out.points[1], track.points[2]);
        assert_eq!(out.points[19], track.points[18]);
    }

    #[test]
    fn no_valid_frames_discard() {
        let gaps: Vec<usize> = (0..5).collect();
        assert_eq!(
            validate_track(&track_with_gaps(5, &gaps)),
            TrackVerdict::Discard { invalid: 5 }
        );
    }

    #[test]
    fn validation_is_idempotent() {
        let track = track_with_gaps(40, &[3, 4, 5, 17, 39]);
        let once = validate_track(&track).into_track().unwrap();
        let twice = validate_track(&once).into_track().unwrap();
        assert_eq!(once, twice);
    }

    fn record(frame: usize, n: usize) -> String {
        let pts: Vec<[f64; 2]> = (0..n).map(|i| [i as f64, 1.0]).collect();
        serde_json::json!({ "frame": frame, "points": pts }).to_string()
    }

    #[test]
    fn parse_marks_absent_frames_invalid() {
        let text: String = (0..290).map(|f| record(f, 68) + "\n").collect();
        let track = parse_landmarks(text.as_bytes(), 300).unwrap();
        assert_eq!(track.len(), 300);
        assert_eq!(track.invalid_count(), 10);
        assert!(track.valid[..290].iter().all(|v| *v));
    }

    #[test]
    fn parse_full_track() {
        let text: String = (0..300).map(|f| record(f, 68) + "\n").collect();
        let track = parse_landmarks(text.as_bytes(), 300).unwrap();
        assert_eq!(track.invalid_count(), 0);
        assert_eq!(track.points[7][3], Point::new(3.0, 1.0));
    }

    #[test]
    fn parse_rejects_wrong_point_count() {
        let text = record(0, 67);
        let err = parse_landmarks(text.as_bytes(), 10).unwrap_err();
        assert!(matches!(err, Error::PointCount { line: 1, found: 67 }));
    }

    #[test]
    fn parse_rejects_out_of_range_frame() {
        let text = record(10, 68);
        let err = parse_landmarks(text.as_bytes(), 10).unwrap_err();
        assert!(matches!(err, Error::FrameOutOfRange { frame: 10, .. }));
    }

    #[test]
    fn parse_rejects_malformed() {
        let err = parse_landmarks("{\"frame\": 0}".as_bytes(), 10).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn frame_sequence_rejects_bad_fps() {
        let data = Array4::<u8>::zeros((1, 4, 4, 3));
        assert!(FrameSequence::new(data.clone(), 0.0).is_err());
        assert!(FrameSequence::new(data, f64::NAN).is_err());
    }

    proptest::proptest! {
        #[test]
        fn accepted_tracks_are_fixed_points(
            frames in 2usize..40,
            gaps in proptest::collection::btree_set(0usize..40, 0..12),
        ) {
            let points: Vec<Landmarks> = (0..frames).map(|t| grid_points(t as f64)).collect();
            let valid = (0..frames).map(|t| !gaps.contains(&t)).collect();
            let track = LandmarkTrack::new(points, valid).unwrap();
            match validate_track(&track) {
                TrackVerdict::Accept { track: filled, .. } => {
                    proptest::prop_assert!(track.invalid_count() <= MAX_MISSING_FRAMES);
                    proptest::prop_assert_eq!(validate_track(&filled), TrackVerdict::Accept { track: filled.clone(), filled: vec![] });
                }
                TrackVerdict::Discard { invalid } => {
                    proptest::prop_assert!(invalid > MAX_MISSING_FRAMES || invalid == frames);
                }
            }
        }
    }
}
